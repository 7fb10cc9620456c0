#include "agtfuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "agtfuse/io.hpp"

namespace agtfuse {

void ConfusionMatrix::add(EmotionLabel truth, EmotionLabel pred) {
  counts_[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)]++;
}

std::size_t ConfusionMatrix::at(EmotionLabel truth, EmotionLabel pred) const {
  return counts_[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
}

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts_) {
    for (std::size_t c : row) n += c;
  }
  return n;
}

std::size_t ConfusionMatrix::support(EmotionLabel truth) const {
  std::size_t n = 0;
  for (std::size_t c : counts_[static_cast<std::size_t>(truth)]) n += c;
  return n;
}

std::size_t ConfusionMatrix::predicted(EmotionLabel pred) const {
  std::size_t n = 0;
  for (const auto& row : counts_) n += row[static_cast<std::size_t>(pred)];
  return n;
}

F1Scores f1_scores(const LabeledIds& preds, const LabeledIds& truths) {
  std::map<std::string, EmotionLabel> pred_map, truth_map;
  for (const auto& [id, label] : preds) {
    if (!pred_map.emplace(id, label).second) {
      throw DataError("duplicate id '" + id + "' in predictions");
    }
  }
  for (const auto& [id, label] : truths) {
    if (!truth_map.emplace(id, label).second) {
      throw DataError("duplicate id '" + id + "' in truths");
    }
  }
  std::vector<std::string> mismatched;
  for (const auto& [id, _] : pred_map) {
    if (!truth_map.contains(id)) mismatched.push_back(id + " (no truth)");
  }
  for (const auto& [id, _] : truth_map) {
    if (!pred_map.contains(id)) mismatched.push_back(id + " (no prediction)");
  }
  if (!mismatched.empty()) {
    std::string msg = "prediction/truth ids do not align:";
    for (const std::string& m : mismatched) msg += "\n  " + m;
    throw DataError(msg);
  }

  F1Scores out;
  for (const auto& [id, truth] : truth_map) {
    out.matrix.add(truth, pred_map.at(id));
  }
  double weighted_sum = 0.0;
  std::size_t total_support = 0;
  double macro_sum = 0.0;
  for (EmotionLabel c : kAllLabels) {
    const std::size_t tp = out.matrix.at(c, c);
    const std::size_t pred_c = out.matrix.predicted(c);
    const std::size_t supp_c = out.matrix.support(c);
    const double precision =
        pred_c == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(pred_c);
    const double recall =
        supp_c == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(supp_c);
    double f1 = 0.0;
    if (precision + recall == 0.0) {
      out.zero_divisions++;
    } else {
      f1 = 2.0 * precision * recall / (precision + recall);
    }
    out.per_class[static_cast<std::size_t>(c)] = f1;
    weighted_sum += f1 * static_cast<double>(supp_c);
    total_support += supp_c;
    macro_sum += f1;
  }
  if (total_support == 0) throw DataError("f1_scores: no samples");
  out.weighted = weighted_sum / static_cast<double>(total_support);
  out.macro = macro_sum / static_cast<double>(kNumLabels);
  return out;
}

LabeledIds labels_from_dataset(const Dataset& ds) {
  LabeledIds out;
  out.reserve(ds.size());
  for (const Sample& s : ds.samples()) {
    if (!s.label.has_value()) {
      throw DataError("sample '" + s.id + "' has no label");
    }
    out.emplace_back(s.id, *s.label);
  }
  return out;
}

LabeledIds labels_from_predictions(const std::vector<PredictionRecord>& preds) {
  LabeledIds out;
  out.reserve(preds.size());
  for (const PredictionRecord& r : preds) out.emplace_back(r.id, r.label);
  return out;
}

namespace {

std::array<double, kNumLabels> normalize(
    const std::array<double, kNumLabels>& values, const char* which) {
  double sum = 0.0;
  for (double v : values) {
    if (v < 0.0 || !std::isfinite(v)) {
      throw DataError(std::string(which) + " distribution has invalid values");
    }
    sum += v;
  }
  if (sum == 0.0) {
    throw DataError(std::string(which) + " distribution is all zero");
  }
  std::array<double, kNumLabels> out{};
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] / sum;
  return out;
}

}  // namespace

std::string DistributionReport::to_csv() const {
  std::ostringstream os;
  os << "label,train,test\n";
  for (EmotionLabel l : kAllLabels) {
    const std::size_t i = static_cast<std::size_t>(l);
    os << label_name(l) << ',' << format_fixed4(train_proportions[i]) << ','
       << format_fixed4(test_proportions[i]) << '\n';
  }
  return os.str();
}

DistributionReport distribution_report_from_counts(
    const std::map<EmotionLabel, double>& train_counts,
    const std::map<EmotionLabel, double>& test_estimate) {
  DistributionReport report;
  for (const auto& [label, value] : train_counts) {
    report.train_values[static_cast<std::size_t>(label)] = value;
  }
  for (const auto& [label, value] : test_estimate) {
    report.test_values[static_cast<std::size_t>(label)] = value;
  }
  report.train_proportions = normalize(report.train_values, "train");
  report.test_proportions = normalize(report.test_values, "test");
  return report;
}

DistributionReport distribution_report(
    const Dataset& train, const std::map<EmotionLabel, double>& test_estimate) {
  std::map<EmotionLabel, double> counts;
  const auto raw = train.label_counts();
  for (EmotionLabel l : kAllLabels) {
    counts[l] = static_cast<double>(raw[static_cast<std::size_t>(l)]);
  }
  return distribution_report_from_counts(counts, test_estimate);
}

AblationInputs make_reference_benchmark(const ReferenceBenchmarkConfig& cfg) {
  SyntheticConfig gen;
  gen.per_class_counts = cfg.per_class_counts;
  gen.d_audio = gen.d_video = gen.d_text = cfg.width;
  gen.noise_sigma = cfg.noise_sigma;
  gen.conflict_rate = cfg.conflict_rate;
  gen.seed = cfg.seed;
  const Dataset full = generate_synthetic(gen);

  SplitResult splits =
      split_dataset(full, cfg.split_fractions, mix_key(cfg.seed, 11));
  // Keep labels on a stratified fraction of the training split; the rest
  // becomes the unlabeled pool.
  SplitResult labeled_split = split_dataset(
      splits.train, {cfg.labeled_fraction, 1.0 - cfg.labeled_fraction, 0.0},
      mix_key(cfg.seed, 12));

  AblationInputs inputs;
  inputs.labeled = std::move(labeled_split.train);
  inputs.unlabeled = without_labels(labeled_split.val);
  inputs.val = std::move(splits.val);
  inputs.test = std::move(splits.test);
  return inputs;
}

AblationSeeds derive_ablation_seeds(std::uint64_t master_seed) {
  return AblationSeeds{
      .audio = mix_key(master_seed, 1),
      .baseline = mix_key(master_seed, 2),
      .agt = mix_key(master_seed, 3),
      .vote = mix_key(master_seed, 4),
  };
}

double AblationResult::at(std::string_view model,
                          std::string_view strategy) const {
  const std::string key = std::string(model) + "/" + std::string(strategy);
  auto it = cells.find(key);
  if (it == cells.end()) {
    throw DataError("ablation cell '" + key + "' was not computed");
  }
  return it->second;
}

std::string AblationResult::to_csv() const {
  std::ostringstream os;
  os << "model";
  for (const std::string& s : strategies) os << ',' << s;
  os << '\n';
  for (const std::string& m : model_names) {
    std::string upper = m;
    std::transform(upper.begin(), upper.end(), upper.begin(),
                   [](unsigned char c) { return std::toupper(c); });
    os << upper;
    for (const std::string& s : strategies) os << ',' << format_fixed4(at(m, s));
    os << '\n';
  }
  return os.str();
}

AblationResult ablation_run(const AblationInputs& inputs,
                            const AblationConfig& cfg) {
  if (cfg.models.empty() || cfg.strategies.empty()) {
    throw DataError("ablation grid must name at least one model and strategy");
  }
  for (const std::string& s : cfg.strategies) {
    if (s != "N" && s != "P" && s != "P+V") {
      throw DataError("unknown ablation strategy '" + s + "'");
    }
  }
  const LabeledIds truths = labels_from_dataset(inputs.test);
  const AblationSeeds seeds = derive_ablation_seeds(cfg.master_seed);
  const auto seed_for = [&](Architecture arch) {
    switch (arch) {
      case Architecture::kAudioOnly: return seeds.audio;
      case Architecture::kBaseline: return seeds.baseline;
      case Architecture::kAgt: return seeds.agt;
    }
    throw TensorError("invalid architecture tag");
  };

  AblationResult result;
  result.strategies = cfg.strategies;
  for (Architecture arch : cfg.models) {
    result.model_names.emplace_back(architecture_name(arch));
  }

  const bool needs_self_train =
      std::any_of(cfg.strategies.begin(), cfg.strategies.end(),
                  [](const std::string& s) { return s != "N"; });
  SelfTrainResult st;
  if (needs_self_train) {
    SelfTrainConfig sc;
    sc.stages = cfg.stages;
    sc.threshold = cfg.threshold;
    sc.hyper = cfg.hyper;
    sc.train = cfg.train;
    sc.model_seeds = {seeds.audio, seeds.baseline, seeds.agt};
    st = self_train(inputs.labeled, inputs.unlabeled, sc);
  }

  double vote_f1 = 0.0;
  bool vote_done = false;
  for (Architecture arch : cfg.models) {
    const std::string name(architecture_name(arch));
    for (const std::string& strategy : cfg.strategies) {
      double f1 = 0.0;
      if (strategy == "N") {
        auto model = make_model(arch, cfg.hyper, seed_for(arch));
        TrainConfig tc = cfg.train;
        tc.seed = seed_for(arch);
        train_classifier(*model, inputs.labeled, tc);
        f1 = f1_scores(labels_from_predictions(predict(*model, inputs.test)),
                       truths)
                 .weighted;
      } else if (strategy == "P") {
        const Model* model = arch == Architecture::kAudioOnly
                                 ? st.audio_model.get()
                                 : arch == Architecture::kBaseline
                                       ? st.baseline_model.get()
                                       : st.agt_model.get();
        f1 = f1_scores(labels_from_predictions(predict(*model, inputs.test)),
                       truths)
                 .weighted;
      } else {  // P+V: one vote over all three self-trained models
        if (!vote_done) {
          auto triples =
              align_triples(predict(*st.audio_model, inputs.test),
                            predict(*st.baseline_model, inputs.test),
                            predict(*st.agt_model, inputs.test));
          VoteConfig vc = cfg.vote;
          vc.seed = seeds.vote;
          const VoteOutcome outcome = vote_all(std::move(triples), vc);
          LabeledIds voted(outcome.labels.begin(), outcome.labels.end());
          vote_f1 = f1_scores(voted, truths).weighted;
          vote_done = true;
        }
        f1 = vote_f1;
      }
      result.cells[name + "/" + strategy] = f1;
    }
  }
  return result;
}

}  // namespace agtfuse
