#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"

#include "agtfuse/models.hpp"
#include "testutil.hpp"

using namespace agtfuse;
using testutil::finite_difference_check;
using testutil::random_tensor;

namespace {

namespace fs = std::filesystem;

ModelHyper tiny_hyper() {
  ModelHyper h;
  h.d_audio = h.d_video = h.d_text = 8;
  h.d_model = 8;
  h.n_heads = 2;
  h.d_ff = 16;
  h.cbt_layers = 1;
  h.hidden = 12;
  h.theta_sim = -1.0;
  return h;
}

Dataset two_class_blobs(std::size_t per_class, double sigma, std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.per_class_counts = {{EmotionLabel::kWorry, per_class},
                          {EmotionLabel::kHappy, per_class}};
  cfg.d_audio = cfg.d_video = cfg.d_text = 8;
  cfg.noise_sigma = sigma;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

std::vector<double> param_snapshot(Model& m) {
  std::vector<double> out;
  for (const Tensor& p : m.parameters()) {
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return out;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("agtfuse-models-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("all architectures emit six logits") {
  SplitMix64 rng(1);
  Tensor a = random_tensor({8}, rng, false);
  Tensor v = random_tensor({8}, rng, false);
  Tensor t = random_tensor({8}, rng, false);
  for (Architecture arch : {Architecture::kAudioOnly, Architecture::kBaseline,
                            Architecture::kAgt}) {
    auto model = make_model(arch, tiny_hyper(), 7);
    Tensor logits = model->forward(a, v, t);
    CHECK(logits.shape() == std::vector<std::size_t>{kNumLabels});
  }
}

TEST_CASE("agt with gating disabled and zeroed blocks reduces to a known map") {
  ModelHyper h = tiny_hyper();
  h.theta_sim = -1.0;
  auto model = make_model(Architecture::kAgt, h, 3);
  // Zero every CBT sublayer output so each block is the identity.
  for (auto& [name, tensor] : model->named_parameters()) {
    if (name.find(".attn.wv") != std::string::npos ||
        name.find(".attn.bv") != std::string::npos ||
        name.find(".attn.wo") != std::string::npos ||
        name.find(".attn.bo") != std::string::npos ||
        name.find(".ffn.w2") != std::string::npos ||
        name.find(".ffn.b2") != std::string::npos) {
      std::fill(tensor.mutable_data().begin(), tensor.mutable_data().end(), 0.0);
    }
  }
  SplitMix64 rng(5);
  Tensor a = random_tensor({8}, rng, false);
  Tensor v = random_tensor({8}, rng, false);
  Tensor t = random_tensor({8}, rng, false);
  Tensor logits = model->forward(a, v, t);

  // Expected: head((A + (V + T)/2)) where X = proj_x(x) and the head is the
  // final linear map, all recomputed with plain loops.
  auto named = model->named_parameters();
  auto get = [&](const std::string& want) -> Tensor {
    for (auto& [name, tensor] : named) {
      if (name == want) return tensor;
    }
    FAIL("missing parameter ", want);
    return {};
  };
  auto project = [&](const Tensor& x, const Tensor& w, const Tensor& b) {
    std::vector<double> out(8, 0.0);
    for (std::size_t j = 0; j < 8; ++j) {
      for (std::size_t i = 0; i < 8; ++i) out[j] += x.at(i) * w.at(i, j);
      out[j] += b.at(j);
    }
    return out;
  };
  const auto A = project(a, get("proj_audio.w"), get("proj_audio.b"));
  const auto V = project(v, get("proj_video.w"), get("proj_video.b"));
  const auto T = project(t, get("proj_text.w"), get("proj_text.b"));
  std::vector<double> fused(8);
  for (std::size_t i = 0; i < 8; ++i) {
    fused[i] = (A[i] + V[i]) / 2.0 + (A[i] + T[i]) / 2.0;
  }
  const Tensor head_w = get("head.w");
  const Tensor head_b = get("head.b");
  for (std::size_t j = 0; j < kNumLabels; ++j) {
    double expected = head_b.at(j);
    for (std::size_t i = 0; i < 8; ++i) expected += fused[i] * head_w.at(i, j);
    CHECK(logits.at(j) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("agt full-graph gradients match finite differences") {
  ModelHyper h = tiny_hyper();
  h.theta_sim = -1.0;  // keep the gate fixed so the map is smooth
  auto model = make_model(Architecture::kAgt, h, 11);
  SplitMix64 rng(13);
  Tensor a = random_tensor({8}, rng);
  Tensor v = random_tensor({8}, rng);
  Tensor t = random_tensor({8}, rng);
  std::vector<Tensor> params = model->parameters();
  params.push_back(a);
  params.push_back(v);
  params.push_back(t);
  auto res = finite_difference_check(
      [&]() { return cross_entropy(reshape(model->forward(a, v, t), {1, 6}), {4}); },
      params);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("baseline: zero weights give uniform softmax; gradients check out") {
  ModelHyper h = tiny_hyper();
  auto model = make_model(Architecture::kBaseline, h, 17);
  for (auto& [name, tensor] : model->named_parameters()) {
    std::fill(tensor.mutable_data().begin(), tensor.mutable_data().end(), 0.0);
  }
  SplitMix64 rng(19);
  Tensor a = random_tensor({8}, rng, false);
  Tensor v = random_tensor({8}, rng, false);
  Tensor t = random_tensor({8}, rng, false);
  Tensor logits = model->forward(a, v, t);
  Tensor probs = softmax(logits);
  for (std::size_t i = 0; i < kNumLabels; ++i) {
    CHECK(logits.at(i) == 0.0);
    CHECK(probs.at(i) == doctest::Approx(1.0 / 6).epsilon(1e-12));
  }

  auto fresh = make_model(Architecture::kBaseline, h, 23);
  Tensor a2 = random_tensor({8}, rng);
  Tensor v2 = random_tensor({8}, rng);
  Tensor t2 = random_tensor({8}, rng);
  std::vector<Tensor> params = fresh->parameters();
  auto res = finite_difference_check(
      [&]() {
        return cross_entropy(reshape(fresh->forward(a2, v2, t2), {1, 6}), {1});
      },
      params);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("audio-only gradients match finite differences") {
  auto model = make_model(Architecture::kAudioOnly, tiny_hyper(), 29);
  SplitMix64 rng(31);
  Tensor a = random_tensor({8}, rng);
  Tensor v = random_tensor({8}, rng, false);
  Tensor t = random_tensor({8}, rng, false);
  std::vector<Tensor> params = model->parameters();
  params.push_back(a);
  auto res = finite_difference_check(
      [&]() {
        return cross_entropy(reshape(model->forward(a, v, t), {1, 6}), {0});
      },
      params);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("models reject mismatched input widths") {
  auto model = make_model(Architecture::kAgt, tiny_hyper(), 37);
  Tensor ok = Tensor::zeros({8});
  Tensor bad = Tensor::zeros({9});
  CHECK_THROWS_AS(model->forward(bad, ok, ok), TensorError);
  CHECK_THROWS_AS(model->forward(ok, bad, ok), TensorError);
  CHECK_THROWS_AS(model->forward(ok, ok, bad), TensorError);
}

TEST_CASE("agt argmax is invariant to a constant shift of the head bias") {
  auto model = make_model(Architecture::kAgt, tiny_hyper(), 41);
  SplitMix64 rng(43);
  Tensor a = random_tensor({8}, rng, false);
  Tensor v = random_tensor({8}, rng, false);
  Tensor t = random_tensor({8}, rng, false);
  auto argmax = [&]() {
    Tensor logits = model->forward(a, v, t);
    std::size_t best = 0;
    for (std::size_t i = 1; i < kNumLabels; ++i) {
      if (logits.at(i) > logits.at(best)) best = i;
    }
    return best;
  };
  const std::size_t before = argmax();
  for (auto& [name, tensor] : model->named_parameters()) {
    if (name == "head.b") {
      for (double& x : tensor.mutable_data()) x += 13.75;
    }
  }
  CHECK(argmax() == before);
}

TEST_CASE("contrastive loss: uniform rows give 2 ln 2") {
  // v_i == t_j for all pairs: every similarity is 1, softmax rows uniform.
  Tensor u = Tensor::from_data({2, 3}, {1, 0, 0, 1, 0, 0});
  const double loss = contrastive_loss(u, u, 0.5).value();
  CHECK(loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("contrastive loss: orthonormal diagonal at tau 0.07") {
  Tensor v = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  const double loss = contrastive_loss(v, v, 0.07).value();
  const double expected = 2.0 * std::log1p(std::exp(-1.0 / 0.07));
  CHECK(loss == doctest::Approx(expected).epsilon(1e-6));
  CHECK(loss == doctest::Approx(1.25e-6).epsilon(0.01));
  CHECK(loss >= 0.0);
}

TEST_CASE("contrastive loss is invariant under paired row permutation") {
  SplitMix64 rng(47);
  Tensor v = l2_normalize_rows(random_tensor({5, 7}, rng, false));
  Tensor t = l2_normalize_rows(random_tensor({5, 7}, rng, false));
  const double base = contrastive_loss(v, t, 0.2).value();
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  std::vector<double> pv(5 * 7), pt(5 * 7);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 7; ++j) {
      pv[i * 7 + j] = v.at(perm[i], j);
      pt[i * 7 + j] = t.at(perm[i], j);
    }
  }
  const double permuted = contrastive_loss(Tensor::from_data({5, 7}, pv),
                                           Tensor::from_data({5, 7}, pt), 0.2)
                              .value();
  CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("contrastive loss rejects non-positive temperature") {
  Tensor v = Tensor::from_data({1, 2}, {1, 0});
  CHECK_THROWS_AS(contrastive_loss(v, v, 0.0), TensorError);
  CHECK_THROWS_AS(contrastive_loss(v, v, -0.1), TensorError);
}

TEST_CASE("alignment head embeds to unit rows and its loss is differentiable") {
  SplitMix64 rng(53);
  AlignmentHead head = AlignmentHead::init(6, 9, 4, 0.07, rng);
  Tensor video = random_tensor({3, 6}, rng, false);
  Tensor text = random_tensor({3, 9}, rng, false);
  auto [v, t] = head.embed(video, text);
  for (std::size_t i = 0; i < 3; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < 4; ++j) norm += v.at(i, j) * v.at(i, j);
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto res = finite_difference_check(
      [&]() {
        auto [ve, te] = head.embed(video, text);
        return contrastive_loss(ve, te, head.tau);
      },
      head.parameters());
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("training reaches perfect accuracy on separable data") {
  Dataset ds = two_class_blobs(30, 0.05, 61);
  auto model = make_model(Architecture::kAudioOnly, tiny_hyper(), 67);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 16;
  cfg.lr = 5e-3;
  cfg.seed = 71;
  TrainResult result = train_classifier(*model, ds, cfg);
  CHECK(result.epoch_mean_loss.size() == 50);
  for (double loss : result.epoch_mean_loss) CHECK(std::isfinite(loss));

  std::size_t correct = 0;
  for (const PredictionRecord& r : predict(*model, ds)) {
    const Sample* s = ds.find(r.id);
    if (s->label == r.label) correct++;
  }
  CHECK(correct == ds.size());
}

TEST_CASE("training is deterministic and lr = 0 is a no-op") {
  Dataset ds = two_class_blobs(10, 0.2, 73);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.lr = 1e-3;
  cfg.seed = 79;

  auto m1 = make_model(Architecture::kBaseline, tiny_hyper(), 83);
  auto m2 = make_model(Architecture::kBaseline, tiny_hyper(), 83);
  TrainResult r1 = train_classifier(*m1, ds, cfg);
  TrainResult r2 = train_classifier(*m2, ds, cfg);
  CHECK(r1.epoch_mean_loss == r2.epoch_mean_loss);
  CHECK(param_snapshot(*m1) == param_snapshot(*m2));

  auto frozen = make_model(Architecture::kBaseline, tiny_hyper(), 83);
  const auto before = param_snapshot(*frozen);
  TrainConfig zero = cfg;
  zero.lr = 0.0;
  train_classifier(*frozen, ds, zero);
  CHECK(param_snapshot(*frozen) == before);
}

TEST_CASE("training rejects unlabeled samples and empty datasets") {
  Dataset ds = two_class_blobs(4, 0.1, 89);
  Dataset with_hole(ds.d_audio(), ds.d_video(), ds.d_text());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Sample s = ds[i];
    if (i == 2) s.label.reset();
    with_hole.add(s);
  }
  auto model = make_model(Architecture::kAudioOnly, tiny_hyper(), 97);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_classifier(*model, with_hole, cfg), DataError);
  Dataset empty;
  CHECK_THROWS_AS(train_classifier(*model, empty, cfg), DataError);
}

TEST_CASE("predictions are proper distributions with argmax bookkeeping") {
  Dataset ds = two_class_blobs(8, 0.4, 101);
  auto model = make_model(Architecture::kAgt, tiny_hyper(), 103);
  for (const PredictionRecord& r : predict(*model, ds)) {
    double sum = 0.0;
    for (double p : r.probs) sum += p;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    CHECK(static_cast<int>(r.label) >= 0);
    CHECK(static_cast<int>(r.label) < 6);
    CHECK(r.confidence == *std::max_element(r.probs.begin(), r.probs.end()));
    CHECK(r.confidence >= 1.0 / 6);
    r.validate();
  }
}

TEST_CASE("model save/load reproduces predictions bit-exactly") {
  TempDir tmp;
  Dataset ds = two_class_blobs(6, 0.3, 107);
  for (Architecture arch : {Architecture::kAudioOnly, Architecture::kBaseline,
                            Architecture::kAgt}) {
    auto model = make_model(arch, tiny_hyper(), 109);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 113;
    train_classifier(*model, ds, cfg);
    const fs::path file =
        tmp.path / (std::string(architecture_name(arch)) + ".json");
    save_model(*model, file);
    auto loaded = load_model(file);
    CHECK(loaded->architecture() == arch);
    CHECK(loaded->hyper() == model->hyper());
    const auto before = predict(*model, ds);
    const auto after = predict(*loaded, ds);
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(before[i].probs == after[i].probs);  // bit-exact
      CHECK(before[i].label == after[i].label);
    }
  }
}

TEST_CASE("model loading validates structure") {
  TempDir tmp;
  auto model = make_model(Architecture::kAudioOnly, tiny_hyper(), 127);
  const fs::path file = tmp.path / "m.json";
  save_model(*model, file);

  auto corrupt = [&](auto mutate) {
    std::ifstream in(file);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    mutate(text);
    const fs::path bad = tmp.path / "bad.json";
    std::ofstream out(bad);
    out << text;
    return bad;
  };

  const fs::path wrong_version = corrupt([](std::string& text) {
    auto pos = text.find("\"format_version\":1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 18, "\"format_version\":9");
  });
  CHECK_THROWS_AS(load_model(wrong_version), DataError);

  const fs::path missing_param = corrupt([](std::string& text) {
    auto pos = text.find("\"mlp.b1\"");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 8, "\"mlp.bX\"");
  });
  CHECK_THROWS_AS(load_model(missing_param), DataError);
}

TEST_CASE("make_model is deterministic per seed") {
  auto m1 = make_model(Architecture::kAgt, tiny_hyper(), 131);
  auto m2 = make_model(Architecture::kAgt, tiny_hyper(), 131);
  auto m3 = make_model(Architecture::kAgt, tiny_hyper(), 132);
  CHECK(param_snapshot(*m1) == param_snapshot(*m2));
  CHECK(param_snapshot(*m1) != param_snapshot(*m3));
}
