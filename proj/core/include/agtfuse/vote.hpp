#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "agtfuse/data.hpp"
#include "agtfuse/predictions.hpp"
#include "agtfuse/rng.hpp"

namespace agtfuse {

/// Weights and trigger set for the regularized vote. The three weights must
/// be non-negative and sum to 1 within 1e-12.
struct VoteConfig {
  double hubert_weight = 0.8;    // audio-only model
  double baseline_weight = 0.1;
  double agt_weight = 0.1;
  std::set<EmotionLabel> sensitive_labels = {EmotionLabel::kWorry,
                                             EmotionLabel::kSad};
  std::uint64_t seed = 0;

  void validate() const;
};

/// One sample's three hard predictions, aligned by id.
struct VoteTriple {
  std::string id;
  EmotionLabel audio;
  EmotionLabel baseline;
  EmotionLabel agt;
};

/// Decides one sample. If no prediction is sensitive: majority vote, with
/// the audio-only prediction breaking 3-way ties, and no randomness
/// consumed. If any prediction is sensitive: one uniform draw u from `rng`,
/// then u < hubert_weight picks audio, u < hubert_weight + baseline_weight
/// picks baseline, anything else picks AGT. The result is always one of the
/// three input predictions.
EmotionLabel vote_one(const VoteTriple& triple, const VoteConfig& cfg,
                      SplitMix64& rng);

struct VoteReport {
  std::size_t majority_branch = 0;
  std::size_t probabilistic_branch = 0;
  std::size_t picked_audio = 0;     // within the probabilistic branch
  std::size_t picked_baseline = 0;
  std::size_t picked_agt = 0;

  std::string to_csv() const;
};

struct VoteOutcome {
  /// Final labels in id-sorted order.
  std::vector<std::pair<std::string, EmotionLabel>> labels;
  VoteReport report;
};

/// Runs vote_one over the triples in byte-wise id-sorted order with a fresh
/// SplitMix64(cfg.seed); the stream position therefore does not depend on
/// input file ordering, only on the sorted sequence of sensitive samples.
VoteOutcome vote_all(std::vector<VoteTriple> triples, const VoteConfig& cfg);

/// Joins three prediction lists into triples. Every id must appear in all
/// three lists exactly once; the error message lists the offending ids.
std::vector<VoteTriple> align_triples(
    const std::vector<PredictionRecord>& audio,
    const std::vector<PredictionRecord>& baseline,
    const std::vector<PredictionRecord>& agt);

}  // namespace agtfuse
