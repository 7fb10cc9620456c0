#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"

#include "agtfuse/data.hpp"
#include "agtfuse/rng.hpp"

using namespace agtfuse;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("agtfuse-test-" + std::to_string(SplitMix64(std::random_device{}()).next()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Sample make_sample(std::string id, double fill, std::optional<EmotionLabel> label) {
  Sample s;
  s.id = std::move(id);
  s.audio = {fill, fill + 0.1};
  s.video = {fill + 0.2, fill + 0.3, fill + 0.4};
  s.text = {fill + 0.5};
  s.label = label;
  return s;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

TEST_CASE("label codes and names are a fixed bijection") {
  CHECK(label_name(EmotionLabel::kWorry) == "worry");
  CHECK(label_name(EmotionLabel::kSad) == "sad");
  for (int c = 0; c < 6; ++c) {
    EmotionLabel l = label_from_code(c);
    CHECK(label_from_name(label_name(l)) == l);
  }
  CHECK_THROWS_AS(label_from_code(6), DataError);
  CHECK_THROWS_AS(label_from_code(-1), DataError);
  CHECK_THROWS_AS(label_from_name("joy"), DataError);
}

TEST_CASE("dataset enforces widths and unique ids") {
  Dataset ds;
  ds.add(make_sample("a", 0.0, EmotionLabel::kHappy));
  CHECK(ds.d_audio() == 2);
  CHECK(ds.d_video() == 3);
  CHECK(ds.d_text() == 1);
  CHECK_THROWS_AS(ds.add(make_sample("a", 1.0, std::nullopt)), DataError);
  Sample wrong = make_sample("b", 1.0, std::nullopt);
  wrong.audio.push_back(0.0);
  CHECK_THROWS_AS(ds.add(wrong), DataError);
}

TEST_CASE("jsonl: empty file parses to an empty dataset") {
  TempDir tmp;
  const fs::path p = tmp.path / "empty.jsonl";
  std::ofstream(p).close();
  Dataset ds = read_jsonl(p);
  CHECK(ds.empty());
}

TEST_CASE("jsonl round-trip is the identity") {
  TempDir tmp;
  Dataset ds;
  ds.add(make_sample("a", 0.123456789012345678, EmotionLabel::kWorry));
  ds.add(make_sample("b", -1e-17, std::nullopt));
  ds.add(make_sample("c", 3.0000000000000004, EmotionLabel::kSad));
  const fs::path p = tmp.path / "roundtrip.jsonl";
  write_jsonl(ds, p);
  Dataset back = read_jsonl(p);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].id == ds[i].id);
    CHECK(back[i].audio == ds[i].audio);  // bit-exact doubles
    CHECK(back[i].video == ds[i].video);
    CHECK(back[i].text == ds[i].text);
    CHECK(back[i].label == ds[i].label);
  }
}

TEST_CASE("jsonl: invalid label names the line") {
  TempDir tmp;
  const fs::path p = tmp.path / "bad.jsonl";
  {
    std::ofstream out(p);
    out << R"({"id":"x","audio":[0],"video":[0],"text":[0],"label":1})" << "\n";
    out << R"({"id":"y","audio":[0],"video":[0],"text":[0],"label":7})" << "\n";
  }
  try {
    read_jsonl(p);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
    CHECK(std::string(e.what()).find("7") != std::string::npos);
  }
}

TEST_CASE("jsonl: malformed line, unknown key, width mismatch") {
  TempDir tmp;
  const fs::path p = tmp.path / "bad2.jsonl";
  {
    std::ofstream out(p);
    out << "{not json}\n";
  }
  CHECK_THROWS_WITH_AS(read_jsonl(p), doctest::Contains(":1"), DataError);
  {
    std::ofstream out(p);
    out << R"({"id":"x","audio":[0],"video":[0],"text":[0],"label":null,"extra":1})"
        << "\n";
  }
  CHECK_THROWS_WITH_AS(read_jsonl(p), doctest::Contains("extra"), DataError);
  {
    std::ofstream out(p);
    out << R"({"id":"x","audio":[0],"video":[0],"text":[0],"label":null})" << "\n";
    out << R"({"id":"y","audio":[0,1],"video":[0],"text":[0],"label":null})" << "\n";
  }
  CHECK_THROWS_WITH_AS(read_jsonl(p), doctest::Contains("y"), DataError);
}

TEST_CASE("synthetic generator reproduces the requested class counts") {
  SyntheticConfig cfg;
  cfg.per_class_counts = {
      {EmotionLabel::kWorry, 616},  {EmotionLabel::kHappy, 1038},
      {EmotionLabel::kNeutral, 1248}, {EmotionLabel::kAngry, 1208},
      {EmotionLabel::kSurprise, 190}, {EmotionLabel::kSad, 730},
  };
  cfg.d_audio = cfg.d_video = cfg.d_text = 8;
  cfg.noise_sigma = 0.1;
  cfg.seed = 1;
  Dataset ds = generate_synthetic(cfg);
  CHECK(ds.size() == 5030);
  const auto counts = ds.label_counts();
  CHECK(counts[0] == 616);
  CHECK(counts[1] == 1038);
  CHECK(counts[2] == 1248);
  CHECK(counts[3] == 1208);
  CHECK(counts[4] == 190);
  CHECK(counts[5] == 730);
}

TEST_CASE("synthetic generator: sigma 0 and no conflicts collapse classes") {
  SyntheticConfig cfg;
  cfg.per_class_counts = {{EmotionLabel::kWorry, 3}, {EmotionLabel::kSad, 2}};
  cfg.d_audio = cfg.d_video = cfg.d_text = 6;
  cfg.noise_sigma = 0.0;
  cfg.seed = 9;
  Dataset ds = generate_synthetic(cfg);
  REQUIRE(ds.size() == 5);
  CHECK(ds[0].audio == ds[1].audio);
  CHECK(ds[0].video == ds[2].video);
  CHECK(ds[3].text == ds[4].text);
  CHECK(ds[0].audio != ds[3].audio);
}

TEST_CASE("synthetic generator is deterministic per seed") {
  SyntheticConfig cfg;
  cfg.per_class_counts = {{EmotionLabel::kHappy, 20}, {EmotionLabel::kSad, 20}};
  cfg.noise_sigma = 0.3;
  cfg.conflict_rate = 0.5;
  cfg.d_audio = cfg.d_video = cfg.d_text = 12;
  cfg.seed = 1234;
  Dataset a = generate_synthetic(cfg);
  Dataset b = generate_synthetic(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].audio == b[i].audio);
    CHECK(a[i].video == b[i].video);
    CHECK(a[i].text == b[i].text);
  }
  cfg.seed = 1235;
  Dataset c = generate_synthetic(cfg);
  CHECK(a[0].audio != c[0].audio);
}

TEST_CASE("synthetic generator: conflicts replace exactly one modality") {
  SyntheticConfig cfg;
  cfg.per_class_counts = {{EmotionLabel::kWorry, 40}, {EmotionLabel::kHappy, 40}};
  cfg.d_audio = cfg.d_video = cfg.d_text = 10;
  cfg.noise_sigma = 0.0;  // exact prototype equality
  cfg.conflict_rate = 1.0;
  cfg.seed = 5;
  Dataset ds = generate_synthetic(cfg);
  SyntheticConfig clean = cfg;
  clean.conflict_rate = 0.0;
  Dataset ref = generate_synthetic(clean);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    int replaced = 0;
    if (ds[i].audio != ref[i].audio) replaced++;
    if (ds[i].video != ref[i].video) replaced++;
    if (ds[i].text != ref[i].text) replaced++;
    CHECK(replaced == 1);
  }
}

TEST_CASE("within-class similarity beats cross-class at sigma 0.1") {
  SyntheticConfig cfg;
  cfg.per_class_counts = {{EmotionLabel::kWorry, 60}, {EmotionLabel::kHappy, 60}};
  cfg.d_audio = cfg.d_video = cfg.d_text = 32;
  cfg.noise_sigma = 0.1;
  cfg.seed = 77;
  Dataset ds = generate_synthetic(cfg);
  double within = 0, cross = 0;
  int n_within = 0, n_cross = 0;
  for (std::size_t i = 0; i < 60; ++i) {
    for (std::size_t j = i + 1; j < 60; j += 7) {
      within += cosine(ds[i].audio, ds[j].audio);
      n_within++;
      cross += cosine(ds[i].audio, ds[60 + j].audio);
      n_cross++;
    }
  }
  CHECK(n_within >= 100);
  CHECK(within / n_within > cross / n_cross);
}

TEST_CASE("synthetic generator rejects bad configs") {
  SyntheticConfig cfg;
  CHECK_THROWS_AS(generate_synthetic(cfg), DataError);  // zero total
  cfg.per_class_counts = {{EmotionLabel::kWorry, 1}};
  cfg.noise_sigma = -0.1;
  CHECK_THROWS_AS(generate_synthetic(cfg), DataError);
  cfg.noise_sigma = 0.1;
  cfg.conflict_rate = 1.5;
  CHECK_THROWS_AS(generate_synthetic(cfg), DataError);
}

TEST_CASE("split: degenerate fractions return the input as train") {
  SyntheticConfig cfg;
  cfg.per_class_counts = {{EmotionLabel::kWorry, 10}, {EmotionLabel::kSad, 6}};
  cfg.d_audio = cfg.d_video = cfg.d_text = 4;
  cfg.seed = 3;
  Dataset ds = generate_synthetic(cfg);
  SplitResult r = split_dataset(ds, {1.0, 0.0, 0.0}, 55);
  REQUIRE(r.train.size() == ds.size());
  CHECK(r.val.empty());
  CHECK(r.test.empty());
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(r.train[i].id == ds[i].id);
}

TEST_CASE("split: per-class sizes stay within one of the target") {
  SyntheticConfig cfg;
  cfg.per_class_counts = {{EmotionLabel::kWorry, 23},
                          {EmotionLabel::kHappy, 41},
                          {EmotionLabel::kSad, 17}};
  cfg.d_audio = cfg.d_video = cfg.d_text = 4;
  cfg.seed = 12;
  Dataset ds = generate_synthetic(cfg);
  const std::array<double, 3> fractions = {0.6, 0.2, 0.2};
  SplitResult r = split_dataset(ds, fractions, 99);

  const std::array<const Dataset*, 3> parts = {&r.train, &r.val, &r.test};
  const auto full_counts = ds.label_counts();
  for (int p = 0; p < 3; ++p) {
    const auto counts = parts[p]->label_counts();
    for (std::size_t c = 0; c < kNumLabels; ++c) {
      const double target = fractions[p] * double(full_counts[c]);
      CHECK(std::abs(double(counts[c]) - target) <= 1.0);
    }
  }

  std::set<std::string> ids;
  for (const auto* part : parts) {
    for (const Sample& s : part->samples()) {
      CHECK(ids.insert(s.id).second);  // disjoint
    }
  }
  CHECK(ids.size() == ds.size());  // exhaustive
}

TEST_CASE("split validates fractions and is deterministic") {
  Dataset ds;
  ds.add(make_sample("a", 0, EmotionLabel::kWorry));
  ds.add(make_sample("b", 1, EmotionLabel::kWorry));
  CHECK_THROWS_AS(split_dataset(ds, {0.5, 0.2, 0.2}, 1), DataError);
  CHECK_THROWS_AS(split_dataset(ds, {1.5, -0.5, 0.0}, 1), DataError);

  SyntheticConfig cfg;
  cfg.per_class_counts = {{EmotionLabel::kWorry, 30}, {EmotionLabel::kHappy, 30}};
  cfg.d_audio = cfg.d_video = cfg.d_text = 4;
  cfg.seed = 8;
  Dataset big = generate_synthetic(cfg);
  SplitResult r1 = split_dataset(big, {0.5, 0.25, 0.25}, 42);
  SplitResult r2 = split_dataset(big, {0.5, 0.25, 0.25}, 42);
  REQUIRE(r1.train.size() == r2.train.size());
  for (std::size_t i = 0; i < r1.train.size(); ++i) {
    CHECK(r1.train[i].id == r2.train[i].id);
  }
  SplitResult r3 = split_dataset(big, {0.5, 0.25, 0.25}, 43);
  bool same = r1.train.size() == r3.train.size();
  if (same) {
    same = true;
    for (std::size_t i = 0; i < r1.train.size() && same; ++i) {
      same = r1.train[i].id == r3.train[i].id;
    }
  }
  CHECK_FALSE(same);
}

TEST_CASE("without_labels strips every label") {
  SyntheticConfig cfg;
  cfg.per_class_counts = {{EmotionLabel::kWorry, 5}};
  cfg.d_audio = cfg.d_video = cfg.d_text = 4;
  cfg.seed = 2;
  Dataset ds = generate_synthetic(cfg);
  Dataset stripped = without_labels(ds);
  CHECK(stripped.size() == ds.size());
  for (const Sample& s : stripped.samples()) CHECK_FALSE(s.label.has_value());
}
