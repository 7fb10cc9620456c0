#include "agtfuse/predictions.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "agtfuse/io.hpp"

namespace agtfuse {

using nlohmann::json;

void PredictionRecord::validate() const {
  if (id.empty()) throw DataError("prediction record with empty id");
  double sum = 0.0, best = -1.0;
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!std::isfinite(p) || p < 0.0) {
      throw DataError("prediction '" + id + "': invalid probability");
    }
    sum += p;
    if (p > best) {
      best = p;
      best_idx = i;
    }
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw DataError("prediction '" + id + "': probabilities sum to " +
                    std::to_string(sum));
  }
  if (static_cast<std::size_t>(label) != best_idx) {
    throw DataError("prediction '" + id + "': label is not the argmax");
  }
  if (confidence != best) {
    throw DataError("prediction '" + id +
                    "': confidence differs from max probability");
  }
}

PredictionRecord make_prediction_record(std::string id,
                                        std::array<double, kNumLabels> probs,
                                        std::optional<std::string> source) {
  PredictionRecord r;
  r.id = std::move(id);
  r.probs = probs;
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  r.label = static_cast<EmotionLabel>(best);
  r.confidence = probs[best];
  r.source = std::move(source);
  r.validate();
  return r;
}

std::vector<PredictionRecord> read_predictions_jsonl(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<PredictionRecord> records;
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
    for (const auto& [key, _] : j.items()) {
      if (key != "id" && key != "probs" && key != "label" &&
          key != "confidence" && key != "source") {
        throw DataError(context + ": unknown key '" + key + "'");
      }
    }
    for (const char* key : {"id", "probs", "label", "confidence"}) {
      if (!j.contains(key)) {
        throw DataError(context + ": missing key '" + std::string(key) + "'");
      }
    }
    PredictionRecord r;
    if (!j["id"].is_string()) throw DataError(context + ": 'id' must be a string");
    r.id = j["id"].get<std::string>();
    if (!j["probs"].is_array() || j["probs"].size() != kNumLabels) {
      throw DataError(context + ": 'probs' must be an array of 6 numbers");
    }
    for (std::size_t i = 0; i < kNumLabels; ++i) {
      if (!j["probs"][i].is_number()) {
        throw DataError(context + ": 'probs' must hold numbers");
      }
      r.probs[i] = j["probs"][i].get<double>();
    }
    if (!j["label"].is_number_integer()) {
      throw DataError(context + ": 'label' must be an integer");
    }
    try {
      r.label = label_from_code(j["label"].get<int>());
    } catch (const DataError& e) {
      throw DataError(context + ": " + e.what());
    }
    if (!j["confidence"].is_number()) {
      throw DataError(context + ": 'confidence' must be a number");
    }
    r.confidence = j["confidence"].get<double>();
    if (j.contains("source")) {
      if (!j["source"].is_string()) {
        throw DataError(context + ": 'source' must be a string");
      }
      r.source = j["source"].get<std::string>();
    }
    try {
      r.validate();
    } catch (const DataError& e) {
      throw DataError(context + ": " + e.what());
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_predictions_jsonl(const std::vector<PredictionRecord>& records,
                             const std::filesystem::path& path) {
  std::string out;
  for (const PredictionRecord& r : records) {
    json j;
    j["id"] = r.id;
    j["probs"] = r.probs;
    j["label"] = static_cast<int>(r.label);
    j["confidence"] = r.confidence;
    if (r.source.has_value()) j["source"] = *r.source;
    out += j.dump();
    out += '\n';
  }
  atomic_write_file(path, out);
}

}  // namespace agtfuse
