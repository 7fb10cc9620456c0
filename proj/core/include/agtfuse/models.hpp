#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "agtfuse/data.hpp"
#include "agtfuse/nn.hpp"
#include "agtfuse/predictions.hpp"
#include "agtfuse/tensor.hpp"

namespace agtfuse {

enum class Architecture { kAudioOnly, kBaseline, kAgt };

std::string_view architecture_name(Architecture arch);
Architecture architecture_from_name(std::string_view name);

/// Shared hyperparameter set. Individual architectures use the subset that
/// applies to them; everything is serialized with the model file.
struct ModelHyper {
  std::size_t d_audio = 64;
  std::size_t d_video = 64;
  std::size_t d_text = 64;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t cbt_layers = 2;
  std::size_t hidden = 128;  // MLP hidden width (audio-only and baseline)
  double theta_sim = 0.2;

  void validate() const;
  bool operator==(const ModelHyper&) const = default;
};

/// A six-way emotion classifier over one sample's embedding triple.
class Model {
 public:
  virtual ~Model() = default;
  virtual Architecture architecture() const = 0;
  /// Inputs are 1-D embeddings; returns 1-D logits of length kNumLabels.
  virtual Tensor forward(const Tensor& audio, const Tensor& video,
                         const Tensor& text) const = 0;
  virtual std::vector<Tensor> parameters() = 0;
  virtual std::vector<std::pair<std::string, Tensor>> named_parameters() = 0;
  const ModelHyper& hyper() const { return hyper_; }

 protected:
  explicit Model(ModelHyper hyper) : hyper_(std::move(hyper)) {}
  ModelHyper hyper_;
};

/// Builds a freshly initialized model. Parameters are drawn from a single
/// SplitMix64 stream seeded with `seed`, in declaration order, so identical
/// (architecture, hyper, seed) triples always produce identical models.
std::unique_ptr<Model> make_model(Architecture arch, const ModelHyper& hyper,
                                  std::uint64_t seed);

// Versioned JSON model files: {format_version, architecture, hyperparameters,
// parameters: {name: {shape, data}}}. Doubles round-trip exactly, so a saved
// model reproduces its predictions bit for bit.
void save_model(Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_model(const std::filesystem::path& path);

/// Projects video/text embedding batches into a shared space and
/// L2-normalizes rows, for use with contrastive_loss.
struct AlignmentHead {
  Tensor proj_video;  // [d_video, d_align]
  Tensor proj_text;   // [d_text, d_align]
  double tau = 0.07;

  static AlignmentHead init(std::size_t d_video, std::size_t d_text,
                            std::size_t d_align, double tau, SplitMix64& rng);
  std::pair<Tensor, Tensor> embed(const Tensor& video_batch,
                                  const Tensor& text_batch) const;
  std::vector<Tensor> parameters();
};

/// Temperature-scaled batch contrastive loss over L2-normalized rows:
/// sum_i -log( exp(<v_i, t_i>/tau) / sum_j exp(<v_i, t_j>/tau) ).
/// Throws TensorError unless tau > 0.
Tensor contrastive_loss(const Tensor& v, const Tensor& t, double tau);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_mean_loss;
};

/// Minibatch Adam on cross-entropy. Every sample must be labeled. The
/// shuffle stream is a pure function of cfg.seed, so runs are deterministic.
/// Parameters are updated in place on `model`.
TrainResult train_classifier(Model& model, const Dataset& train_set,
                             const TrainConfig& cfg);

/// Softmax probabilities per sample, in dataset order. Works on unlabeled
/// data; ties in the argmax break toward the lowest class index.
std::vector<PredictionRecord> predict(const Model& model, const Dataset& ds);

}  // namespace agtfuse
