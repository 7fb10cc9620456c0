#include "run_config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace agtfuse::cli {

using nlohmann::json;

namespace {

void require_keys(const json& j, std::initializer_list<const char*> allowed,
                  const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || key == k;
    if (!known) {
      throw DataError("config: unknown key '" + key + "' in " + where);
    }
  }
}

std::map<EmotionLabel, std::size_t> parse_counts_json(const json& j,
                                                      const std::string& where) {
  std::map<EmotionLabel, std::size_t> counts;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number_unsigned()) {
      throw DataError("config: count for '" + key + "' in " + where +
                      " must be a non-negative integer");
    }
    counts[label_from_name(key)] = value.get<std::size_t>();
  }
  return counts;
}

void load_data_section(const json& j, SyntheticConfig& d) {
  require_keys(j, {"d_audio", "d_video", "d_text", "noise_sigma",
                   "conflict_rate", "counts"},
               "data");
  if (j.contains("d_audio")) d.d_audio = j["d_audio"].get<std::size_t>();
  if (j.contains("d_video")) d.d_video = j["d_video"].get<std::size_t>();
  if (j.contains("d_text")) d.d_text = j["d_text"].get<std::size_t>();
  if (j.contains("noise_sigma")) d.noise_sigma = j["noise_sigma"].get<double>();
  if (j.contains("conflict_rate")) {
    d.conflict_rate = j["conflict_rate"].get<double>();
  }
  if (j.contains("counts")) {
    d.per_class_counts = parse_counts_json(j["counts"], "data.counts");
  }
}

void load_model_section(const json& j, ModelHyper& m) {
  require_keys(j, {"d_model", "n_heads", "d_ff", "cbt_layers", "hidden",
                   "theta_sim"},
               "model");
  if (j.contains("d_model")) m.d_model = j["d_model"].get<std::size_t>();
  if (j.contains("n_heads")) m.n_heads = j["n_heads"].get<std::size_t>();
  if (j.contains("d_ff")) m.d_ff = j["d_ff"].get<std::size_t>();
  if (j.contains("cbt_layers")) m.cbt_layers = j["cbt_layers"].get<std::size_t>();
  if (j.contains("hidden")) m.hidden = j["hidden"].get<std::size_t>();
  if (j.contains("theta_sim")) m.theta_sim = j["theta_sim"].get<double>();
}

void load_train_section(const json& j, TrainConfig& t) {
  require_keys(j, {"epochs", "batch_size", "lr"}, "train");
  if (j.contains("epochs")) t.epochs = j["epochs"].get<std::size_t>();
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("lr")) t.lr = j["lr"].get<double>();
}

void load_semisup_section(const json& j, RunConfig& cfg) {
  require_keys(j, {"stages", "threshold"}, "semisup");
  if (j.contains("stages")) cfg.stages = j["stages"].get<std::size_t>();
  if (j.contains("threshold")) cfg.threshold = j["threshold"].get<double>();
}

void load_vote_section(const json& j, VoteConfig& v) {
  require_keys(j, {"hubert_weight", "baseline_weight", "agt_weight",
                   "sensitive"},
               "vote");
  if (j.contains("hubert_weight")) {
    v.hubert_weight = j["hubert_weight"].get<double>();
  }
  if (j.contains("baseline_weight")) {
    v.baseline_weight = j["baseline_weight"].get<double>();
  }
  if (j.contains("agt_weight")) v.agt_weight = j["agt_weight"].get<double>();
  if (j.contains("sensitive")) {
    v.sensitive_labels.clear();
    for (const auto& name : j["sensitive"]) {
      v.sensitive_labels.insert(label_from_name(name.get<std::string>()));
    }
  }
}

void load_benchmark_section(const json& j, ReferenceBenchmarkConfig& b) {
  require_keys(j, {"counts", "width", "noise_sigma", "conflict_rate",
                   "split_fractions", "labeled_fraction"},
               "benchmark");
  if (j.contains("counts")) {
    b.per_class_counts = parse_counts_json(j["counts"], "benchmark.counts");
  }
  if (j.contains("width")) b.width = j["width"].get<std::size_t>();
  if (j.contains("noise_sigma")) b.noise_sigma = j["noise_sigma"].get<double>();
  if (j.contains("conflict_rate")) {
    b.conflict_rate = j["conflict_rate"].get<double>();
  }
  if (j.contains("split_fractions")) {
    const auto f = j["split_fractions"].get<std::vector<double>>();
    if (f.size() != 3) {
      throw DataError("config: benchmark.split_fractions needs 3 values");
    }
    b.split_fractions = {f[0], f[1], f[2]};
  }
  if (j.contains("labeled_fraction")) {
    b.labeled_fraction = j["labeled_fraction"].get<double>();
  }
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  require_keys(j, {"seed", "data", "model", "train", "semisup", "vote",
                   "benchmark"},
               "the top level");
  RunConfig cfg;
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("data")) load_data_section(j["data"], cfg.data);
  if (j.contains("model")) load_model_section(j["model"], cfg.model);
  if (j.contains("train")) load_train_section(j["train"], cfg.train);
  if (j.contains("semisup")) load_semisup_section(j["semisup"], cfg);
  if (j.contains("vote")) load_vote_section(j["vote"], cfg.vote);
  if (j.contains("benchmark")) load_benchmark_section(j["benchmark"], cfg.benchmark);
  return cfg;
}

std::map<EmotionLabel, std::size_t> parse_counts(const std::string& text) {
  std::map<EmotionLabel, std::size_t> counts;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string item =
        text.substr(pos, comma == std::string::npos ? comma : comma - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos) {
      throw DataError("counts: expected name=value, got '" + item + "'");
    }
    const EmotionLabel label = label_from_name(item.substr(0, eq));
    counts[label] = std::stoull(item.substr(eq + 1));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (counts.empty()) throw DataError("counts: empty specification");
  return counts;
}

}  // namespace agtfuse::cli
