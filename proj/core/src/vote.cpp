#include "agtfuse/vote.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace agtfuse {

void VoteConfig::validate() const {
  if (hubert_weight < 0.0 || baseline_weight < 0.0 || agt_weight < 0.0) {
    throw DataError("vote weights must be non-negative");
  }
  const double sum = hubert_weight + baseline_weight + agt_weight;
  if (std::abs(sum - 1.0) > 1e-12) {
    throw DataError("vote weights must sum to 1, got " + std::to_string(sum));
  }
}

EmotionLabel vote_one(const VoteTriple& triple, const VoteConfig& cfg,
                      SplitMix64& rng) {
  const bool sensitive = cfg.sensitive_labels.contains(triple.audio) ||
                         cfg.sensitive_labels.contains(triple.baseline) ||
                         cfg.sensitive_labels.contains(triple.agt);
  if (!sensitive) {
    if (triple.baseline == triple.agt) return triple.baseline;
    if (triple.audio == triple.baseline || triple.audio == triple.agt) {
      return triple.audio;
    }
    return triple.audio;  // three-way tie: trust the audio-only prediction
  }
  const double u = rng.next_double();
  if (u < cfg.hubert_weight) return triple.audio;
  if (u < cfg.hubert_weight + cfg.baseline_weight) return triple.baseline;
  return triple.agt;
}

std::string VoteReport::to_csv() const {
  std::ostringstream os;
  os << "metric,count\n";
  os << "majority_branch," << majority_branch << "\n";
  os << "probabilistic_branch," << probabilistic_branch << "\n";
  os << "picked_audio," << picked_audio << "\n";
  os << "picked_baseline," << picked_baseline << "\n";
  os << "picked_agt," << picked_agt << "\n";
  return os.str();
}

VoteOutcome vote_all(std::vector<VoteTriple> triples, const VoteConfig& cfg) {
  cfg.validate();
  std::sort(triples.begin(), triples.end(),
            [](const VoteTriple& a, const VoteTriple& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < triples.size(); ++i) {
    if (triples[i].id == triples[i - 1].id) {
      throw DataError("duplicate id '" + triples[i].id + "' in vote input");
    }
  }

  SplitMix64 rng(cfg.seed);
  VoteOutcome out;
  out.labels.reserve(triples.size());
  for (const VoteTriple& t : triples) {
    const bool sensitive = cfg.sensitive_labels.contains(t.audio) ||
                           cfg.sensitive_labels.contains(t.baseline) ||
                           cfg.sensitive_labels.contains(t.agt);
    const EmotionLabel final_label = vote_one(t, cfg, rng);
    if (sensitive) {
      out.report.probabilistic_branch++;
      if (final_label == t.audio) {
        out.report.picked_audio++;
      } else if (final_label == t.baseline) {
        out.report.picked_baseline++;
      } else {
        out.report.picked_agt++;
      }
    } else {
      out.report.majority_branch++;
    }
    out.labels.emplace_back(t.id, final_label);
  }
  return out;
}

namespace {

std::map<std::string, EmotionLabel> index_by_id(
    const std::vector<PredictionRecord>& preds, const char* which) {
  std::map<std::string, EmotionLabel> out;
  for (const PredictionRecord& r : preds) {
    if (!out.emplace(r.id, r.label).second) {
      throw DataError("duplicate id '" + r.id + "' in " + which +
                      " predictions");
    }
  }
  return out;
}

}  // namespace

std::vector<VoteTriple> align_triples(
    const std::vector<PredictionRecord>& audio,
    const std::vector<PredictionRecord>& baseline,
    const std::vector<PredictionRecord>& agt) {
  const auto a = index_by_id(audio, "audio");
  const auto b = index_by_id(baseline, "baseline");
  const auto g = index_by_id(agt, "agt");

  std::set<std::string> all_ids;
  for (const auto& [id, _] : a) all_ids.insert(id);
  for (const auto& [id, _] : b) all_ids.insert(id);
  for (const auto& [id, _] : g) all_ids.insert(id);

  std::vector<std::string> missing;
  for (const std::string& id : all_ids) {
    std::string absent;
    if (!a.contains(id)) absent += " audio";
    if (!b.contains(id)) absent += " baseline";
    if (!g.contains(id)) absent += " agt";
    if (!absent.empty()) missing.push_back(id + " (missing from:" + absent + ")");
  }
  if (!missing.empty()) {
    std::string msg = "prediction ids do not align across the three inputs:";
    for (const std::string& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }

  std::vector<VoteTriple> triples;
  triples.reserve(all_ids.size());
  for (const std::string& id : all_ids) {
    triples.push_back(VoteTriple{id, a.at(id), b.at(id), g.at(id)});
  }
  return triples;
}

}  // namespace agtfuse
