#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "agtfuse/data.hpp"

namespace agtfuse {

/// One model's prediction for one sample: the full class-probability vector,
/// its argmax as the hard label, and the max probability as confidence.
struct PredictionRecord {
  std::string id;
  std::array<double, kNumLabels> probs{};
  EmotionLabel label = EmotionLabel::kWorry;
  double confidence = 0.0;
  std::optional<std::string> source;

  /// Checks label == argmax(probs), confidence == max(probs), and that the
  /// probabilities sum to 1 within 1e-9.
  void validate() const;
};

/// Builds a consistent record from a probability vector (ties on the argmax
/// break toward the lowest class index).
PredictionRecord make_prediction_record(std::string id,
                                        std::array<double, kNumLabels> probs,
                                        std::optional<std::string> source = {});

// JSONL schema, one object per line:
//   {"id": "...", "probs": [6 floats], "label": 0..5, "confidence": float}
// plus an optional "source" string (used by pseudo-label files).
std::vector<PredictionRecord> read_predictions_jsonl(
    const std::filesystem::path& path);
void write_predictions_jsonl(const std::vector<PredictionRecord>& records,
                             const std::filesystem::path& path);

}  // namespace agtfuse
