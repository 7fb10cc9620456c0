#include "agtfuse/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "agtfuse/io.hpp"
#include "agtfuse/optim.hpp"

namespace agtfuse {

using nlohmann::json;

std::string_view architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::kAudioOnly: return "audio_only";
    case Architecture::kBaseline: return "baseline";
    case Architecture::kAgt: return "agt";
  }
  throw TensorError("invalid architecture tag");
}

Architecture architecture_from_name(std::string_view name) {
  if (name == "audio_only") return Architecture::kAudioOnly;
  if (name == "baseline") return Architecture::kBaseline;
  if (name == "agt") return Architecture::kAgt;
  throw DataError("unknown architecture '" + std::string(name) + "'");
}

void ModelHyper::validate() const {
  if (d_audio == 0 || d_video == 0 || d_text == 0 || d_model == 0 ||
      hidden == 0 || cbt_layers == 0) {
    throw TensorError("model hyperparameters must be positive");
  }
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw TensorError("d_model must be a positive multiple of n_heads");
  }
  if (d_ff < d_model) {
    throw TensorError("d_ff must be >= d_model");
  }
  if (theta_sim < -1.0 || theta_sim > 1.0) {
    throw TensorError("theta_sim must lie in [-1, 1]");
  }
}

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, SplitMix64& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::randn({fan_in, fan_out}, rng, stddev, /*requires_grad=*/true);
}

void require_width(const Tensor& x, std::size_t want, const char* what) {
  if (x.ndim() != 1 || x.size() != want) {
    throw TensorError(std::string(what) + " embedding has shape " +
                      shape_to_string(x.shape()) + ", model expects [" +
                      std::to_string(want) + "]");
  }
}

void append_cbt_names(std::vector<std::pair<std::string, Tensor>>& out,
                      const std::string& prefix, CbtBlockParams& block) {
  out.emplace_back(prefix + ".attn.wq", block.attn.wq);
  out.emplace_back(prefix + ".attn.bq", block.attn.bq);
  out.emplace_back(prefix + ".attn.wk", block.attn.wk);
  out.emplace_back(prefix + ".attn.bk", block.attn.bk);
  out.emplace_back(prefix + ".attn.wv", block.attn.wv);
  out.emplace_back(prefix + ".attn.bv", block.attn.bv);
  out.emplace_back(prefix + ".attn.wo", block.attn.wo);
  out.emplace_back(prefix + ".attn.bo", block.attn.bo);
  out.emplace_back(prefix + ".ffn.w1", block.ffn_w1);
  out.emplace_back(prefix + ".ffn.b1", block.ffn_b1);
  out.emplace_back(prefix + ".ffn.w2", block.ffn_w2);
  out.emplace_back(prefix + ".ffn.b2", block.ffn_b2);
  out.emplace_back(prefix + ".ln1.gamma", block.ln1_gamma);
  out.emplace_back(prefix + ".ln1.beta", block.ln1_beta);
  out.emplace_back(prefix + ".ln2.gamma", block.ln2_gamma);
  out.emplace_back(prefix + ".ln2.beta", block.ln2_beta);
}

class AudioOnlyModel final : public Model {
 public:
  AudioOnlyModel(ModelHyper hyper, std::uint64_t seed) : Model(hyper) {
    hyper_.validate();
    SplitMix64 rng(seed);
    w1_ = glorot(hyper_.d_audio, hyper_.hidden, rng);
    b1_ = Tensor::zeros({hyper_.hidden}, true);
    w2_ = glorot(hyper_.hidden, kNumLabels, rng);
    b2_ = Tensor::zeros({kNumLabels}, true);
  }

  Architecture architecture() const override { return Architecture::kAudioOnly; }

  Tensor forward(const Tensor& audio, const Tensor&, const Tensor&)
      const override {
    require_width(audio, hyper_.d_audio, "audio");
    Tensor h = gelu(linear_vec(audio, w1_, b1_));
    return linear_vec(h, w2_, b2_);
  }

  std::vector<Tensor> parameters() override { return {w1_, b1_, w2_, b2_}; }

  std::vector<std::pair<std::string, Tensor>> named_parameters() override {
    return {{"mlp.w1", w1_}, {"mlp.b1", b1_}, {"mlp.w2", w2_}, {"mlp.b2", b2_}};
  }

 private:
  Tensor w1_, b1_, w2_, b2_;
};

class BaselineModel final : public Model {
 public:
  BaselineModel(ModelHyper hyper, std::uint64_t seed) : Model(hyper) {
    hyper_.validate();
    SplitMix64 rng(seed);
    proj_a_w_ = glorot(hyper_.d_audio, hyper_.d_model, rng);
    proj_a_b_ = Tensor::zeros({hyper_.d_model}, true);
    proj_v_w_ = glorot(hyper_.d_video, hyper_.d_model, rng);
    proj_v_b_ = Tensor::zeros({hyper_.d_model}, true);
    proj_t_w_ = glorot(hyper_.d_text, hyper_.d_model, rng);
    proj_t_b_ = Tensor::zeros({hyper_.d_model}, true);
    mlp_w1_ = glorot(3 * hyper_.d_model, hyper_.hidden, rng);
    mlp_b1_ = Tensor::zeros({hyper_.hidden}, true);
    mlp_w2_ = glorot(hyper_.hidden, kNumLabels, rng);
    mlp_b2_ = Tensor::zeros({kNumLabels}, true);
  }

  Architecture architecture() const override { return Architecture::kBaseline; }

  Tensor forward(const Tensor& audio, const Tensor& video,
                 const Tensor& text) const override {
    require_width(audio, hyper_.d_audio, "audio");
    require_width(video, hyper_.d_video, "video");
    require_width(text, hyper_.d_text, "text");
    const std::size_t d = hyper_.d_model;
    Tensor a = reshape(linear_vec(audio, proj_a_w_, proj_a_b_), {1, d});
    Tensor v = reshape(linear_vec(video, proj_v_w_, proj_v_b_), {1, d});
    Tensor t = reshape(linear_vec(text, proj_t_w_, proj_t_b_), {1, d});
    Tensor cat = reshape(concat_cols({a, v, t}), {3 * d});
    Tensor h = gelu(linear_vec(cat, mlp_w1_, mlp_b1_));
    return linear_vec(h, mlp_w2_, mlp_b2_);
  }

  std::vector<Tensor> parameters() override {
    return {proj_a_w_, proj_a_b_, proj_v_w_, proj_v_b_, proj_t_w_, proj_t_b_,
            mlp_w1_,   mlp_b1_,   mlp_w2_,   mlp_b2_};
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() override {
    return {{"proj_audio.w", proj_a_w_}, {"proj_audio.b", proj_a_b_},
            {"proj_video.w", proj_v_w_}, {"proj_video.b", proj_v_b_},
            {"proj_text.w", proj_t_w_},  {"proj_text.b", proj_t_b_},
            {"mlp.w1", mlp_w1_},         {"mlp.b1", mlp_b1_},
            {"mlp.w2", mlp_w2_},         {"mlp.b2", mlp_b2_}};
  }

 private:
  Tensor proj_a_w_, proj_a_b_, proj_v_w_, proj_v_b_, proj_t_w_, proj_t_b_;
  Tensor mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
};

/// Audio-guided fusion: audio is projected once and leads both the
/// audio+video and audio+text streams; each stream runs through its own
/// residual transformer stack, is mean-pooled, and the two pooled stream
/// vectors are similarity-gated and summed before the classifier head.
class AgtModel final : public Model {
 public:
  AgtModel(ModelHyper hyper, std::uint64_t seed) : Model(hyper) {
    hyper_.validate();
    SplitMix64 rng(seed);
    proj_a_w_ = glorot(hyper_.d_audio, hyper_.d_model, rng);
    proj_a_b_ = Tensor::zeros({hyper_.d_model}, true);
    proj_v_w_ = glorot(hyper_.d_video, hyper_.d_model, rng);
    proj_v_b_ = Tensor::zeros({hyper_.d_model}, true);
    proj_t_w_ = glorot(hyper_.d_text, hyper_.d_model, rng);
    proj_t_b_ = Tensor::zeros({hyper_.d_model}, true);
    for (std::size_t i = 0; i < hyper_.cbt_layers; ++i) {
      av_blocks_.push_back(
          CbtBlockParams::init(hyper_.d_model, hyper_.n_heads, hyper_.d_ff, rng));
    }
    for (std::size_t i = 0; i < hyper_.cbt_layers; ++i) {
      at_blocks_.push_back(
          CbtBlockParams::init(hyper_.d_model, hyper_.n_heads, hyper_.d_ff, rng));
    }
    amf_.theta_sim = hyper_.theta_sim;
    head_w_ = glorot(hyper_.d_model, kNumLabels, rng);
    head_b_ = Tensor::zeros({kNumLabels}, true);
  }

  Architecture architecture() const override { return Architecture::kAgt; }

  Tensor forward(const Tensor& audio, const Tensor& video,
                 const Tensor& text) const override {
    require_width(audio, hyper_.d_audio, "audio");
    require_width(video, hyper_.d_video, "video");
    require_width(text, hyper_.d_text, "text");
    Tensor a = linear_vec(audio, proj_a_w_, proj_a_b_);
    Tensor v = linear_vec(video, proj_v_w_, proj_v_b_);
    Tensor t = linear_vec(text, proj_t_w_, proj_t_b_);
    Tensor av = stack_rows({a, v});
    Tensor at = stack_rows({a, t});
    for (const CbtBlockParams& block : av_blocks_) av = cbt_forward(av, block);
    for (const CbtBlockParams& block : at_blocks_) at = cbt_forward(at, block);
    AmfResult fused = amf_gate({mean_rows(av), mean_rows(at)}, amf_);
    return linear_vec(fused.fused, head_w_, head_b_);
  }

  std::vector<Tensor> parameters() override {
    std::vector<Tensor> out = {proj_a_w_, proj_a_b_, proj_v_w_,
                               proj_v_b_, proj_t_w_, proj_t_b_};
    for (CbtBlockParams& b : av_blocks_) {
      auto p = b.parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    for (CbtBlockParams& b : at_blocks_) {
      auto p = b.parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    out.push_back(head_w_);
    out.push_back(head_b_);
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() override {
    std::vector<std::pair<std::string, Tensor>> out = {
        {"proj_audio.w", proj_a_w_}, {"proj_audio.b", proj_a_b_},
        {"proj_video.w", proj_v_w_}, {"proj_video.b", proj_v_b_},
        {"proj_text.w", proj_t_w_},  {"proj_text.b", proj_t_b_}};
    for (std::size_t i = 0; i < av_blocks_.size(); ++i) {
      append_cbt_names(out, "av." + std::to_string(i), av_blocks_[i]);
    }
    for (std::size_t i = 0; i < at_blocks_.size(); ++i) {
      append_cbt_names(out, "at." + std::to_string(i), at_blocks_[i]);
    }
    out.emplace_back("head.w", head_w_);
    out.emplace_back("head.b", head_b_);
    return out;
  }

 private:
  Tensor proj_a_w_, proj_a_b_, proj_v_w_, proj_v_b_, proj_t_w_, proj_t_b_;
  std::vector<CbtBlockParams> av_blocks_;
  std::vector<CbtBlockParams> at_blocks_;
  AmfParams amf_;
  Tensor head_w_, head_b_;
};

}  // namespace

std::unique_ptr<Model> make_model(Architecture arch, const ModelHyper& hyper,
                                  std::uint64_t seed) {
  switch (arch) {
    case Architecture::kAudioOnly:
      return std::make_unique<AudioOnlyModel>(hyper, seed);
    case Architecture::kBaseline:
      return std::make_unique<BaselineModel>(hyper, seed);
    case Architecture::kAgt:
      return std::make_unique<AgtModel>(hyper, seed);
  }
  throw TensorError("invalid architecture tag");
}

void save_model(Model& model, const std::filesystem::path& path) {
  json j;
  j["format_version"] = 1;
  j["architecture"] = std::string(architecture_name(model.architecture()));
  const ModelHyper& h = model.hyper();
  j["hyperparameters"] = {
      {"d_audio", h.d_audio},     {"d_video", h.d_video},
      {"d_text", h.d_text},       {"d_model", h.d_model},
      {"n_heads", h.n_heads},     {"d_ff", h.d_ff},
      {"cbt_layers", h.cbt_layers}, {"hidden", h.hidden},
      {"theta_sim", h.theta_sim},
  };
  json params = json::object();
  for (auto& [name, tensor] : model.named_parameters()) {
    json entry;
    entry["shape"] = tensor.shape();
    entry["data"] = std::vector<double>(tensor.data().begin(),
                                        tensor.data().end());
    params[name] = std::move(entry);
  }
  j["parameters"] = std::move(params);
  atomic_write_file(path, j.dump());
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1) {
    throw DataError(path.string() + ": unsupported model format version");
  }
  const Architecture arch =
      architecture_from_name(j.at("architecture").get<std::string>());
  const json& hj = j.at("hyperparameters");
  ModelHyper h;
  h.d_audio = hj.at("d_audio").get<std::size_t>();
  h.d_video = hj.at("d_video").get<std::size_t>();
  h.d_text = hj.at("d_text").get<std::size_t>();
  h.d_model = hj.at("d_model").get<std::size_t>();
  h.n_heads = hj.at("n_heads").get<std::size_t>();
  h.d_ff = hj.at("d_ff").get<std::size_t>();
  h.cbt_layers = hj.at("cbt_layers").get<std::size_t>();
  h.hidden = hj.at("hidden").get<std::size_t>();
  h.theta_sim = hj.at("theta_sim").get<double>();

  std::unique_ptr<Model> model = make_model(arch, h, /*seed=*/0);
  const json& params = j.at("parameters");
  std::set<std::string> seen;
  auto named = model->named_parameters();
  for (auto& [name, tensor] : named) {
    if (!params.contains(name)) {
      throw DataError(path.string() + ": missing parameter '" + name + "'");
    }
    const json& entry = params.at(name);
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != tensor.shape()) {
      throw DataError(path.string() + ": parameter '" + name +
                      "' has shape " + shape_to_string(shape) + ", expected " +
                      shape_to_string(tensor.shape()));
    }
    const auto data = entry.at("data").get<std::vector<double>>();
    if (data.size() != tensor.size()) {
      throw DataError(path.string() + ": parameter '" + name +
                      "' has wrong element count");
    }
    std::copy(data.begin(), data.end(), tensor.mutable_data().begin());
    seen.insert(name);
  }
  for (const auto& [key, _] : params.items()) {
    if (!seen.contains(key)) {
      throw DataError(path.string() + ": unexpected parameter '" + key + "'");
    }
  }
  return model;
}

AlignmentHead AlignmentHead::init(std::size_t d_video, std::size_t d_text,
                                  std::size_t d_align, double tau,
                                  SplitMix64& rng) {
  if (tau <= 0.0) throw TensorError("alignment temperature must be positive");
  AlignmentHead head;
  head.proj_video = glorot(d_video, d_align, rng);
  head.proj_text = glorot(d_text, d_align, rng);
  head.tau = tau;
  return head;
}

std::pair<Tensor, Tensor> AlignmentHead::embed(const Tensor& video_batch,
                                               const Tensor& text_batch) const {
  return {l2_normalize_rows(matmul(video_batch, proj_video)),
          l2_normalize_rows(matmul(text_batch, proj_text))};
}

std::vector<Tensor> AlignmentHead::parameters() {
  return {proj_video, proj_text};
}

Tensor contrastive_loss(const Tensor& v, const Tensor& t, double tau) {
  if (tau <= 0.0) {
    throw TensorError("contrastive_loss: temperature must be positive, got " +
                      std::to_string(tau));
  }
  if (v.ndim() != 2 || t.ndim() != 2 || v.shape() != t.shape()) {
    throw TensorError("contrastive_loss: batches must share shape, got " +
                      shape_to_string(v.shape()) + " vs " +
                      shape_to_string(t.shape()));
  }
  const std::size_t b = v.rows();
  Tensor sims = scalar_mul(matmul(v, transpose(t)), 1.0 / tau);
  std::vector<int> diagonal(b);
  for (std::size_t i = 0; i < b; ++i) diagonal[i] = static_cast<int>(i);
  // cross_entropy averages over rows; the loss is the sum.
  return scalar_mul(cross_entropy(sims, diagonal), static_cast<double>(b));
}

namespace {

struct PreparedSample {
  Tensor audio, video, text;
  int label;
};

std::vector<PreparedSample> prepare(const Dataset& ds, bool require_labels) {
  std::vector<PreparedSample> out;
  out.reserve(ds.size());
  for (const Sample& s : ds.samples()) {
    if (require_labels && !s.label.has_value()) {
      throw DataError("unlabeled sample '" + s.id + "' in training set");
    }
    PreparedSample p;
    p.audio = Tensor::from_data({s.audio.size()}, s.audio);
    p.video = Tensor::from_data({s.video.size()}, s.video);
    p.text = Tensor::from_data({s.text.size()}, s.text);
    p.label = s.label.has_value() ? static_cast<int>(*s.label) : -1;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TrainResult train_classifier(Model& model, const Dataset& train_set,
                             const TrainConfig& cfg) {
  if (train_set.empty()) throw DataError("training set is empty");
  if (cfg.batch_size == 0) throw DataError("batch_size must be >= 1");
  if (cfg.lr < 0.0) throw DataError("learning rate must be >= 0");
  const auto samples = prepare(train_set, /*require_labels=*/true);

  AdamOptimizer opt(model.parameters(), AdamConfig{.lr = cfg.lr});
  SplitMix64 shuffle_rng(mix_key(cfg.seed, 9001));
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  result.epoch_mean_loss.reserve(cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t count =
          std::min(cfg.batch_size, order.size() - start);
      Tape tape;
      Tape::Scope scope(tape);
      std::vector<Tensor> logit_rows;
      std::vector<int> labels;
      logit_rows.reserve(count);
      labels.reserve(count);
      for (std::size_t k = 0; k < count; ++k) {
        const PreparedSample& s = samples[order[start + k]];
        logit_rows.push_back(model.forward(s.audio, s.video, s.text));
        labels.push_back(s.label);
      }
      Tensor loss = cross_entropy(stack_rows(logit_rows), labels);
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
      loss_sum += loss.value() * static_cast<double>(count);
    }
    result.epoch_mean_loss.push_back(loss_sum /
                                     static_cast<double>(samples.size()));
  }
  return result;
}

std::vector<PredictionRecord> predict(const Model& model, const Dataset& ds) {
  const auto samples = prepare(ds, /*require_labels=*/false);
  std::vector<PredictionRecord> records;
  records.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PreparedSample& s = samples[i];
    Tensor probs = softmax(model.forward(s.audio, s.video, s.text), -1);
    std::array<double, kNumLabels> p{};
    if (probs.size() != kNumLabels) {
      throw TensorError("model produced " + std::to_string(probs.size()) +
                        " logits, expected " + std::to_string(kNumLabels));
    }
    std::copy(probs.data().begin(), probs.data().end(), p.begin());
    records.push_back(make_prediction_record(ds[i].id, p));
  }
  return records;
}

}  // namespace agtfuse
