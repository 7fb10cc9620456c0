#include "agtfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "agtfuse/io.hpp"
#include "agtfuse/rng.hpp"

namespace agtfuse {

using nlohmann::json;

std::string_view label_name(EmotionLabel label) {
  switch (label) {
    case EmotionLabel::kWorry: return "worry";
    case EmotionLabel::kHappy: return "happy";
    case EmotionLabel::kNeutral: return "neutral";
    case EmotionLabel::kAngry: return "angry";
    case EmotionLabel::kSurprise: return "surprise";
    case EmotionLabel::kSad: return "sad";
  }
  throw DataError("invalid emotion label code");
}

EmotionLabel label_from_code(int code) {
  if (code < 0 || code >= static_cast<int>(kNumLabels)) {
    throw DataError("emotion label code " + std::to_string(code) +
                    " out of range [0, 6)");
  }
  return static_cast<EmotionLabel>(code);
}

EmotionLabel label_from_name(std::string_view name) {
  for (EmotionLabel l : kAllLabels) {
    if (label_name(l) == name) return l;
  }
  throw DataError("unknown emotion label name '" + std::string(name) + "'");
}

Dataset::Dataset(std::size_t d_audio, std::size_t d_video, std::size_t d_text)
    : d_audio_(d_audio), d_video_(d_video), d_text_(d_text),
      widths_fixed_(true) {}

void Dataset::add(Sample sample) {
  if (sample.id.empty()) throw DataError("sample id must be non-empty");
  if (index_.contains(sample.id)) {
    throw DataError("duplicate sample id '" + sample.id + "'");
  }
  if (!widths_fixed_) {
    d_audio_ = sample.audio.size();
    d_video_ = sample.video.size();
    d_text_ = sample.text.size();
    widths_fixed_ = true;
  }
  if (sample.audio.size() != d_audio_ || sample.video.size() != d_video_ ||
      sample.text.size() != d_text_) {
    throw DataError("sample '" + sample.id +
                    "' does not match dataset widths (audio " +
                    std::to_string(d_audio_) + ", video " +
                    std::to_string(d_video_) + ", text " +
                    std::to_string(d_text_) + ")");
  }
  for (const auto* vec : {&sample.audio, &sample.video, &sample.text}) {
    for (double v : *vec) {
      if (!std::isfinite(v)) {
        throw DataError("sample '" + sample.id + "' contains non-finite values");
      }
    }
  }
  index_.emplace(sample.id, samples_.size());
  samples_.push_back(std::move(sample));
}

bool Dataset::contains(std::string_view id) const {
  return index_.contains(std::string(id));
}

const Sample* Dataset::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &samples_[it->second];
}

Dataset Dataset::labeled_subset() const {
  Dataset out(d_audio_, d_video_, d_text_);
  for (const Sample& s : samples_) {
    if (s.label.has_value()) out.add(s);
  }
  return out;
}

Dataset Dataset::unlabeled_subset() const {
  Dataset out(d_audio_, d_video_, d_text_);
  for (const Sample& s : samples_) {
    if (!s.label.has_value()) out.add(s);
  }
  return out;
}

std::array<std::size_t, kNumLabels> Dataset::label_counts() const {
  std::array<std::size_t, kNumLabels> counts{};
  for (const Sample& s : samples_) {
    if (s.label.has_value()) counts[static_cast<std::size_t>(*s.label)]++;
  }
  return counts;
}

Dataset without_labels(const Dataset& ds) {
  Dataset out(ds.d_audio(), ds.d_video(), ds.d_text());
  for (Sample s : ds.samples()) {
    s.label.reset();
    out.add(std::move(s));
  }
  return out;
}

namespace {

std::vector<double> parse_vector(const json& j, const char* field,
                                 const std::string& context) {
  if (!j.is_array()) {
    throw DataError(context + ": field '" + field + "' must be an array");
  }
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) {
      throw DataError(context + ": field '" + field + "' must hold numbers");
    }
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

Dataset read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string context = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(context + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(context + ": expected a JSON object");
    for (const auto& [key, _] : j.items()) {
      if (key != "id" && key != "audio" && key != "video" && key != "text" &&
          key != "label") {
        throw DataError(context + ": unknown key '" + key + "'");
      }
    }
    for (const char* key : {"id", "audio", "video", "text", "label"}) {
      if (!j.contains(key)) {
        throw DataError(context + ": missing key '" + std::string(key) + "'");
      }
    }
    Sample s;
    if (!j["id"].is_string()) throw DataError(context + ": 'id' must be a string");
    s.id = j["id"].get<std::string>();
    s.audio = parse_vector(j["audio"], "audio", context);
    s.video = parse_vector(j["video"], "video", context);
    s.text = parse_vector(j["text"], "text", context);
    if (j["label"].is_null()) {
      s.label.reset();
    } else if (j["label"].is_number_integer()) {
      try {
        s.label = label_from_code(j["label"].get<int>());
      } catch (const DataError& e) {
        throw DataError(context + ": " + e.what());
      }
    } else {
      throw DataError(context + ": 'label' must be an integer or null");
    }
    try {
      ds.add(std::move(s));
    } catch (const DataError& e) {
      throw DataError(context + ": " + e.what());
    }
  }
  return ds;
}

void write_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  std::string out;
  for (const Sample& s : ds.samples()) {
    json j;
    j["id"] = s.id;
    j["audio"] = s.audio;
    j["video"] = s.video;
    j["text"] = s.text;
    if (s.label.has_value()) {
      j["label"] = static_cast<int>(*s.label);
    } else {
      j["label"] = nullptr;
    }
    out += j.dump();
    out += '\n';
  }
  atomic_write_file(path, out);
}

namespace {

std::vector<double> unit_prototype(std::uint64_t seed, int label, int modality,
                                   std::size_t dim) {
  SplitMix64 rng(mix_key(seed, static_cast<std::uint64_t>(label) + 1,
                         static_cast<std::uint64_t>(modality) + 101));
  std::vector<double> v(dim);
  double norm_sq = 0.0;
  for (double& x : v) {
    x = rng.next_gaussian();
    norm_sq += x * x;
  }
  const double norm = std::sqrt(norm_sq);
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
  std::size_t total = 0;
  for (const auto& [label, count] : config.per_class_counts) total += count;
  if (total == 0) throw DataError("synthetic generator: zero total count");
  if (config.noise_sigma < 0.0) {
    throw DataError("synthetic generator: noise_sigma must be >= 0");
  }
  if (config.conflict_rate < 0.0 || config.conflict_rate > 1.0) {
    throw DataError("synthetic generator: conflict_rate must be in [0, 1]");
  }
  if (config.d_audio == 0 || config.d_video == 0 || config.d_text == 0) {
    throw DataError("synthetic generator: widths must be positive");
  }

  const std::array<std::size_t, 3> widths = {config.d_audio, config.d_video,
                                             config.d_text};
  // Prototypes are a pure function of (seed, class, modality).
  std::array<std::array<std::vector<double>, 3>, kNumLabels> protos;
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    for (int m = 0; m < 3; ++m) {
      protos[c][m] = unit_prototype(config.seed, static_cast<int>(c), m,
                                    widths[static_cast<std::size_t>(m)]);
    }
  }

  SplitMix64 rng(mix_key(config.seed, 777));
  Dataset ds(config.d_audio, config.d_video, config.d_text);
  std::size_t counter = 0;
  for (EmotionLabel label : kAllLabels) {
    auto it = config.per_class_counts.find(label);
    const std::size_t count = it == config.per_class_counts.end() ? 0 : it->second;
    const std::size_t c = static_cast<std::size_t>(label);
    for (std::size_t k = 0; k < count; ++k) {
      Sample s;
      {
        std::ostringstream id;
        id << "syn-" << std::setw(6) << std::setfill('0') << counter++;
        s.id = id.str();
      }
      std::array<std::vector<double>*, 3> fields = {&s.audio, &s.video, &s.text};
      for (int m = 0; m < 3; ++m) {
        const std::size_t dim = widths[static_cast<std::size_t>(m)];
        auto& vec = *fields[static_cast<std::size_t>(m)];
        vec.resize(dim);
        const auto& proto = protos[c][m];
        for (std::size_t i = 0; i < dim; ++i) {
          vec[i] = proto[i] + config.noise_sigma * rng.next_gaussian();
        }
      }
      if (config.conflict_rate > 0.0 &&
          rng.next_double() < config.conflict_rate) {
        const int m = static_cast<int>(rng.next_below(3));
        const std::size_t other =
            (c + 1 + rng.next_below(kNumLabels - 1)) % kNumLabels;
        const std::size_t dim = widths[static_cast<std::size_t>(m)];
        auto& vec = *fields[static_cast<std::size_t>(m)];
        const auto& proto = protos[other][m];
        for (std::size_t i = 0; i < dim; ++i) {
          vec[i] = proto[i] + config.noise_sigma * rng.next_gaussian();
        }
      }
      s.label = label;
      ds.add(std::move(s));
    }
  }
  return ds;
}

SplitResult split_dataset(const Dataset& ds, std::array<double, 3> fractions,
                          std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0 || f > 1.0) {
      throw DataError("split: fractions must be in [0, 1]");
    }
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw DataError("split: fractions must sum to 1, got " +
                    std::to_string(sum));
  }

  // Strata: one per label plus one for unlabeled samples.
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& label = ds[i].label;
    const int key = label.has_value() ? static_cast<int>(*label) : -1;
    strata[key].push_back(i);
  }

  std::array<std::vector<std::size_t>, 3> part_indices;
  SplitMix64 rng(mix_key(seed, 4242));
  for (auto& [key, indices] : strata) {
    rng.shuffle(indices);
    const std::size_t n = indices.size();
    // Largest-remainder apportionment over the three parts.
    std::array<std::size_t, 3> alloc{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (int p = 0; p < 3; ++p) {
      const double target = fractions[static_cast<std::size_t>(p)] *
                            static_cast<double>(n);
      alloc[static_cast<std::size_t>(p)] =
          static_cast<std::size_t>(std::floor(target));
      remainder[static_cast<std::size_t>(p)] =
          target - std::floor(target);
      assigned += alloc[static_cast<std::size_t>(p)];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return remainder[static_cast<std::size_t>(a)] >
             remainder[static_cast<std::size_t>(b)];
    });
    for (std::size_t left = n - assigned, i = 0; left > 0; --left, ++i) {
      alloc[static_cast<std::size_t>(order[i % 3])]++;
    }
    std::size_t cursor = 0;
    for (int p = 0; p < 3; ++p) {
      for (std::size_t k = 0; k < alloc[static_cast<std::size_t>(p)]; ++k) {
        part_indices[static_cast<std::size_t>(p)].push_back(indices[cursor++]);
      }
    }
  }

  SplitResult result;
  std::array<Dataset*, 3> parts = {&result.train, &result.val, &result.test};
  for (int p = 0; p < 3; ++p) {
    auto& idx = part_indices[static_cast<std::size_t>(p)];
    std::sort(idx.begin(), idx.end());  // keep input order within each part
    *parts[static_cast<std::size_t>(p)] =
        Dataset(ds.d_audio(), ds.d_video(), ds.d_text());
    for (std::size_t i : idx) parts[static_cast<std::size_t>(p)]->add(ds[i]);
  }
  return result;
}

}  // namespace agtfuse
