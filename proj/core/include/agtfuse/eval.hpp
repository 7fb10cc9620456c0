#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "agtfuse/data.hpp"
#include "agtfuse/models.hpp"
#include "agtfuse/semisup.hpp"
#include "agtfuse/vote.hpp"

namespace agtfuse {

/// 6x6 counts; rows are true labels, columns predicted labels.
class ConfusionMatrix {
 public:
  void add(EmotionLabel truth, EmotionLabel pred);
  std::size_t at(EmotionLabel truth, EmotionLabel pred) const;
  std::size_t total() const;
  std::size_t support(EmotionLabel truth) const;     // row sum
  std::size_t predicted(EmotionLabel pred) const;    // column sum

 private:
  std::array<std::array<std::size_t, kNumLabels>, kNumLabels> counts_{};
};

struct F1Scores {
  std::array<double, kNumLabels> per_class{};
  double weighted = 0.0;  // support-weighted mean
  double macro = 0.0;     // unweighted mean over all six classes
  std::size_t zero_divisions = 0;
  ConfusionMatrix matrix;
};

using LabeledIds = std::vector<std::pair<std::string, EmotionLabel>>;

/// Per-class F1 = 2PR/(P+R), defined as 0 when P+R = 0 (counted in
/// zero_divisions). preds and truths are aligned by id; a mismatch in the id
/// sets is an error listing the offending ids.
F1Scores f1_scores(const LabeledIds& preds, const LabeledIds& truths);

LabeledIds labels_from_dataset(const Dataset& ds);
LabeledIds labels_from_predictions(const std::vector<PredictionRecord>& preds);

/// Train-set label distribution next to a probed test-set estimate, both
/// normalized to proportions. The estimate values are treated as
/// unnormalized weights.
struct DistributionReport {
  std::array<double, kNumLabels> train_values{};
  std::array<double, kNumLabels> train_proportions{};
  std::array<double, kNumLabels> test_values{};
  std::array<double, kNumLabels> test_proportions{};

  std::string to_csv() const;
};

DistributionReport distribution_report(
    const Dataset& train, const std::map<EmotionLabel, double>& test_estimate);
DistributionReport distribution_report_from_counts(
    const std::map<EmotionLabel, double>& train_counts,
    const std::map<EmotionLabel, double>& test_estimate);

/// Fixed inputs for one ablation run: a labeled pool, an unlabeled pool, and
/// labeled held-out splits.
struct AblationInputs {
  Dataset labeled;
  Dataset unlabeled;
  Dataset val;
  Dataset test;
};

/// The synthetic benchmark used by the strategy ablation: the training-set
/// class counts reported for the real corpus, sigma-0.3 noise, a train/val/
/// test split, and only a fraction of the training split keeping its labels.
struct ReferenceBenchmarkConfig {
  std::map<EmotionLabel, std::size_t> per_class_counts = {
      {EmotionLabel::kWorry, 616},  {EmotionLabel::kHappy, 1038},
      {EmotionLabel::kNeutral, 1248}, {EmotionLabel::kAngry, 1208},
      {EmotionLabel::kSurprise, 190}, {EmotionLabel::kSad, 730},
  };
  std::size_t width = 64;  // shared by all three modalities
  double noise_sigma = 0.3;
  double conflict_rate = 0.15;
  std::array<double, 3> split_fractions{0.6, 0.2, 0.2};
  double labeled_fraction = 0.2;
  std::uint64_t seed = 0;
};

AblationInputs make_reference_benchmark(const ReferenceBenchmarkConfig& cfg);

/// Per-model seeds and the vote seed, derived from one master seed. Cells of
/// an ablation grid reuse these, so a strategy-N cell reproduces a direct
/// train+eval run with the same derived seed.
struct AblationSeeds {
  std::uint64_t audio, baseline, agt, vote;
};
AblationSeeds derive_ablation_seeds(std::uint64_t master_seed);

struct AblationConfig {
  std::vector<Architecture> models = {Architecture::kBaseline,
                                      Architecture::kAgt};
  std::vector<std::string> strategies = {"N", "P", "P+V"};
  ModelHyper hyper;
  TrainConfig train;  // per-model seeds come from derive_ablation_seeds
  std::size_t stages = 2;
  double threshold = 0.9;
  VoteConfig vote;    // the seed field is replaced by the derived vote seed
  std::uint64_t master_seed = 0;
};

/// Weighted-F1 grid over (model, strategy). Strategy N trains on the labeled
/// pool alone; P evaluates the model after self-training; P+V evaluates the
/// regularized vote over the three self-trained models (all three
/// architectures vote, so the P+V value is shared across rows).
struct AblationResult {
  std::vector<std::string> model_names;
  std::vector<std::string> strategies;
  std::map<std::string, double> cells;  // key "<model>/<strategy>"

  double at(std::string_view model, std::string_view strategy) const;
  std::string to_csv() const;
};

AblationResult ablation_run(const AblationInputs& inputs,
                            const AblationConfig& cfg);

}  // namespace agtfuse
