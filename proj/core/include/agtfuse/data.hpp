#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace agtfuse {

/// Data validation failures: malformed files, width mismatches, bad labels.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// The six emotion classes with their fixed integer codes.
enum class EmotionLabel : int {
  kWorry = 0,
  kHappy = 1,
  kNeutral = 2,
  kAngry = 3,
  kSurprise = 4,
  kSad = 5,
};

inline constexpr std::size_t kNumLabels = 6;
inline constexpr std::array<EmotionLabel, kNumLabels> kAllLabels = {
    EmotionLabel::kWorry,    EmotionLabel::kHappy, EmotionLabel::kNeutral,
    EmotionLabel::kAngry,    EmotionLabel::kSurprise, EmotionLabel::kSad,
};

std::string_view label_name(EmotionLabel label);
/// Throws DataError unless code is in [0, 6).
EmotionLabel label_from_code(int code);
/// Throws DataError unless the name is one of the six fixed names.
EmotionLabel label_from_name(std::string_view name);

/// One utterance: an audio/video/text embedding triple plus optional label.
struct Sample {
  std::string id;
  std::vector<double> audio;
  std::vector<double> video;
  std::vector<double> text;
  std::optional<EmotionLabel> label;
};

/// Ordered collection of samples with uniform declared embedding widths and
/// unique ids. Widths are fixed by the first sample added.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t d_audio, std::size_t d_video, std::size_t d_text);

  void add(Sample sample);

  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  bool contains(std::string_view id) const;
  const Sample* find(std::string_view id) const;

  std::size_t d_audio() const { return d_audio_; }
  std::size_t d_video() const { return d_video_; }
  std::size_t d_text() const { return d_text_; }

  Dataset labeled_subset() const;
  Dataset unlabeled_subset() const;
  std::array<std::size_t, kNumLabels> label_counts() const;

 private:
  std::vector<Sample> samples_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t d_audio_ = 0, d_video_ = 0, d_text_ = 0;
  bool widths_fixed_ = false;
};

/// Copy with every label removed.
Dataset without_labels(const Dataset& ds);

// JSONL persistence. One object per line:
//   {"id": "...", "audio": [...], "video": [...], "text": [...],
//    "label": 0..5 | null}
// Unknown keys are rejected; floats round-trip exactly.
Dataset read_jsonl(const std::filesystem::path& path);
void write_jsonl(const Dataset& ds, const std::filesystem::path& path);

/// Synthetic multimodal generator. Each class/modality pair gets a fixed
/// unit-norm prototype derived from (seed, class, modality); a sample is its
/// class prototype plus N(0, sigma^2) noise per modality. With probability
/// conflict_rate one uniformly chosen modality is rebuilt from a different
/// class's prototype (plus fresh noise) to simulate modality disagreement.
struct SyntheticConfig {
  std::map<EmotionLabel, std::size_t> per_class_counts;
  std::size_t d_audio = 64;
  std::size_t d_video = 64;
  std::size_t d_text = 64;
  double noise_sigma = 0.1;
  double conflict_rate = 0.0;
  std::uint64_t seed = 0;
};

Dataset generate_synthetic(const SyntheticConfig& config);

/// Deterministic stratified split. Fractions must be in [0,1] and sum to 1
/// within 1e-9; per stratum the largest-remainder rule keeps every part
/// within one sample of its target. Splits preserve input order.
struct SplitResult {
  Dataset train, val, test;
};

SplitResult split_dataset(const Dataset& ds, std::array<double, 3> fractions,
                          std::uint64_t seed);

}  // namespace agtfuse
