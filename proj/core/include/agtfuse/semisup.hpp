#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "agtfuse/data.hpp"
#include "agtfuse/models.hpp"
#include "agtfuse/predictions.hpp"

namespace agtfuse {

struct PseudoLabel {
  std::string id;
  EmotionLabel label;
  double confidence;
};

/// High-confidence pseudo-labels from one source (one model, or the
/// agreement of several). Ids are unique and every confidence is strictly
/// above the threshold that built the set.
struct PseudoLabelSet {
  std::vector<PseudoLabel> entries;
  std::string source;
  double threshold = 0.0;

  bool contains(std::string_view id) const;
};

/// Keeps records with confidence strictly greater than `threshold`
/// (a record at exactly the threshold is dropped). threshold must lie in
/// (0, 1]; 1.0 is the degenerate case that admits nothing.
PseudoLabelSet confidence_filter(const std::vector<PredictionRecord>& preds,
                                 double threshold = 0.9,
                                 std::string source = "");

/// A sample survives iff all three sets contain it with the same label; its
/// confidence becomes the minimum of the three. Duplicate ids inside one set
/// are an error.
PseudoLabelSet intersect_pseudo_labels(
    const std::array<PseudoLabelSet, 3>& sets);

/// Per-stage accounting of the self-training loop.
struct SelfTrainStageReport {
  std::size_t stage = 0;         // 1-based
  std::size_t pseudo_count = 0;  // accepted pseudo-labels feeding this stage
  std::array<std::size_t, kNumLabels> pseudo_per_label{};
  std::size_t pool_size = 0;     // labeled + pseudo-labeled
};

struct SelfTrainConfig {
  std::size_t stages = 2;
  double threshold = 0.9;
  ModelHyper hyper;
  TrainConfig train;  // epochs/batch/lr shared by all models
  // Seed per model, in the order audio-only, baseline, AGT. Each model's
  // init and shuffle streams derive from its own seed, so a stage-1 model
  // is bit-identical to a plain train run with the same seed.
  std::array<std::uint64_t, 3> model_seeds{1, 2, 3};
};

struct SelfTrainResult {
  std::unique_ptr<Model> audio_model;
  std::unique_ptr<Model> baseline_model;
  std::unique_ptr<Model> agt_model;
  std::vector<SelfTrainStageReport> stage_reports;
  /// The pseudo-label set accepted before each retraining stage (empty for
  /// stage 1), most recent last.
  std::vector<PseudoLabelSet> accepted_sets;
};

/// Stage 1 trains the three architectures on the labeled pool. Every later
/// stage predicts on the unlabeled set with the previous stage's models,
/// filters each model's predictions at `threshold`, intersects the three
/// sets, rebuilds the pool as labeled + accepted pseudo-labeled samples, and
/// retrains all three models from scratch with their original seeds.
/// Thresholding is redone each stage. Only unlabeled ids ever receive
/// pseudo-labels; the unlabeled dataset must carry no labels.
SelfTrainResult self_train(const Dataset& labeled, const Dataset& unlabeled,
                           const SelfTrainConfig& cfg);

}  // namespace agtfuse
