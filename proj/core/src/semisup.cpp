#include "agtfuse/semisup.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace agtfuse {

bool PseudoLabelSet::contains(std::string_view id) const {
  return std::any_of(entries.begin(), entries.end(),
                     [&](const PseudoLabel& e) { return e.id == id; });
}

PseudoLabelSet confidence_filter(const std::vector<PredictionRecord>& preds,
                                 double threshold, std::string source) {
  if (threshold <= 0.0 || threshold > 1.0) {
    throw DataError("confidence threshold must lie in (0, 1], got " +
                    std::to_string(threshold));
  }
  PseudoLabelSet set;
  set.source = std::move(source);
  set.threshold = threshold;
  std::set<std::string> seen;
  for (const PredictionRecord& r : preds) {
    if (!seen.insert(r.id).second) {
      throw DataError("duplicate prediction id '" + r.id + "'");
    }
    if (r.confidence > threshold) {
      set.entries.push_back(PseudoLabel{r.id, r.label, r.confidence});
    }
  }
  return set;
}

PseudoLabelSet intersect_pseudo_labels(
    const std::array<PseudoLabelSet, 3>& sets) {
  std::array<std::map<std::string, PseudoLabel>, 3> by_id;
  for (std::size_t k = 0; k < 3; ++k) {
    for (const PseudoLabel& e : sets[k].entries) {
      if (!by_id[k].emplace(e.id, e).second) {
        throw DataError("duplicate id '" + e.id + "' within pseudo-label set '" +
                        sets[k].source + "'");
      }
    }
  }
  PseudoLabelSet out;
  out.source = "intersection(" + sets[0].source + ", " + sets[1].source + ", " +
               sets[2].source + ")";
  out.threshold =
      std::min({sets[0].threshold, sets[1].threshold, sets[2].threshold});
  for (const auto& [id, first] : by_id[0]) {
    const auto it1 = by_id[1].find(id);
    const auto it2 = by_id[2].find(id);
    if (it1 == by_id[1].end() || it2 == by_id[2].end()) continue;
    if (it1->second.label != first.label || it2->second.label != first.label) {
      continue;  // present everywhere but the models disagree
    }
    const double conf = std::min(
        {first.confidence, it1->second.confidence, it2->second.confidence});
    out.entries.push_back(PseudoLabel{id, first.label, conf});
  }
  return out;
}

namespace {

struct Trio {
  std::unique_ptr<Model> audio, baseline, agt;
};

Trio train_trio(const Dataset& pool, const SelfTrainConfig& cfg) {
  Trio trio;
  const std::array<Architecture, 3> archs = {
      Architecture::kAudioOnly, Architecture::kBaseline, Architecture::kAgt};
  std::array<std::unique_ptr<Model>*, 3> slots = {&trio.audio, &trio.baseline,
                                                  &trio.agt};
  for (std::size_t k = 0; k < 3; ++k) {
    auto model = make_model(archs[k], cfg.hyper, cfg.model_seeds[k]);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.model_seeds[k];
    train_classifier(*model, pool, tc);
    *slots[k] = std::move(model);
  }
  return trio;
}

}  // namespace

SelfTrainResult self_train(const Dataset& labeled, const Dataset& unlabeled,
                           const SelfTrainConfig& cfg) {
  if (labeled.empty()) throw DataError("self_train: labeled set is empty");
  if (cfg.stages < 1) throw DataError("self_train: stages must be >= 1");
  if (cfg.threshold <= 0.0 || cfg.threshold > 1.0) {
    throw DataError("self_train: threshold must lie in (0, 1]");
  }
  for (const Sample& s : labeled.samples()) {
    if (!s.label.has_value()) {
      throw DataError("self_train: unlabeled sample '" + s.id +
                      "' in the labeled set");
    }
  }
  for (const Sample& s : unlabeled.samples()) {
    if (s.label.has_value()) {
      throw DataError("self_train: sample '" + s.id +
                      "' in the unlabeled set carries a label");
    }
    if (labeled.contains(s.id)) {
      throw DataError("self_train: id '" + s.id +
                      "' appears in both labeled and unlabeled sets");
    }
  }

  SelfTrainResult result;
  Trio trio = train_trio(labeled, cfg);
  result.stage_reports.push_back(SelfTrainStageReport{
      .stage = 1, .pseudo_count = 0, .pseudo_per_label = {},
      .pool_size = labeled.size()});

  for (std::size_t stage = 2; stage <= cfg.stages; ++stage) {
    PseudoLabelSet accepted;
    if (!unlabeled.empty()) {
      const std::array<PseudoLabelSet, 3> sets = {
          confidence_filter(predict(*trio.audio, unlabeled), cfg.threshold,
                            "audio_only"),
          confidence_filter(predict(*trio.baseline, unlabeled), cfg.threshold,
                            "baseline"),
          confidence_filter(predict(*trio.agt, unlabeled), cfg.threshold,
                            "agt")};
      accepted = intersect_pseudo_labels(sets);
    } else {
      accepted.source = "intersection(audio_only, baseline, agt)";
      accepted.threshold = cfg.threshold;
    }

    Dataset pool(labeled.d_audio(), labeled.d_video(), labeled.d_text());
    for (const Sample& s : labeled.samples()) pool.add(s);
    SelfTrainStageReport report;
    report.stage = stage;
    report.pseudo_count = accepted.entries.size();
    for (const PseudoLabel& e : accepted.entries) {
      const Sample* src = unlabeled.find(e.id);
      if (src == nullptr) {
        throw DataError("self_train: pseudo-label for unknown id '" + e.id +
                        "'");
      }
      Sample s = *src;
      s.label = e.label;
      pool.add(std::move(s));
      report.pseudo_per_label[static_cast<std::size_t>(e.label)]++;
    }
    report.pool_size = pool.size();

    trio = train_trio(pool, cfg);
    result.stage_reports.push_back(report);
    result.accepted_sets.push_back(std::move(accepted));
  }

  result.audio_model = std::move(trio.audio);
  result.baseline_model = std::move(trio.baseline);
  result.agt_model = std::move(trio.agt);
  return result;
}

}  // namespace agtfuse
