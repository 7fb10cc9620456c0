#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "agtfuse/eval.hpp"
#include "agtfuse/io.hpp"
#include "agtfuse/models.hpp"
#include "agtfuse/semisup.hpp"
#include "agtfuse/vote.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace agtfuse;
using cli::RunConfig;
using nlohmann::json;

namespace {

Architecture parse_arch(const std::string& name) {
  return architecture_from_name(name);
}

std::set<EmotionLabel> parse_label_set(const std::string& text) {
  std::set<EmotionLabel> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string item =
        text.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (!item.empty()) out.insert(label_from_name(item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw DataError("empty label set");
  return out;
}

/// Reads (id, label) pairs from any of the three JSONL shapes floating
/// around the pipeline: full prediction records, bare {"id","label"} lines
/// (the vote output), or dataset lines with an inline label.
LabeledIds read_labels_flexible(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  LabeledIds out;
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
    if (!j.is_object() || !j.contains("id") || !j.contains("label")) {
      throw DataError(context + ": expected an object with id and label");
    }
    if (j["label"].is_null()) {
      throw DataError(context + ": sample has no label");
    }
    out.emplace_back(j["id"].get<std::string>(),
                     label_from_code(j["label"].get<int>()));
  }
  return out;
}

void write_final_labels(const std::vector<std::pair<std::string, EmotionLabel>>&
                            labels,
                        const fs::path& path) {
  std::string out;
  for (const auto& [id, label] : labels) {
    json j;
    j["id"] = id;
    j["label"] = static_cast<int>(label);
    out += j.dump();
    out += '\n';
  }
  atomic_write_file(path, out);
}

std::string self_train_report_csv(const std::vector<SelfTrainStageReport>& reports) {
  std::ostringstream os;
  os << "stage,pseudo_count,pool_size";
  for (EmotionLabel l : kAllLabels) os << ',' << label_name(l);
  os << '\n';
  for (const SelfTrainStageReport& r : reports) {
    os << r.stage << ',' << r.pseudo_count << ',' << r.pool_size;
    for (std::size_t c : r.pseudo_per_label) os << ',' << c;
    os << '\n';
  }
  return os.str();
}

int run(int argc, char** argv) {
  // The config file provides defaults; explicit flags override it, so it has
  // to be located before the options are declared.
  RunConfig cfg;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) {
      cfg = cli::load_run_config(argv[i + 1]);
    } else if (arg.rfind("--config=", 0) == 0) {
      cfg = cli::load_run_config(arg.substr(9));
    }
  }

  CLI::App app{"Audio-guided multimodal emotion fusion pipeline"};
  app.require_subcommand(1);
  std::string config_path;  // consumed above; declared so --config parses
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "JSON config file with defaults for all flags");
    sub->add_option("--seed", cfg.seed, "Master seed for all randomness")
        ->capture_default_str();
  };
  const auto add_model_flags = [&](CLI::App* sub) {
    sub->add_option("--d-model", cfg.model.d_model, "Fusion width")
        ->capture_default_str();
    sub->add_option("--n-heads", cfg.model.n_heads, "Attention heads")
        ->capture_default_str();
    sub->add_option("--d-ff", cfg.model.d_ff, "Feed-forward width")
        ->capture_default_str();
    sub->add_option("--cbt-layers", cfg.model.cbt_layers,
                    "Transformer blocks per stream")
        ->capture_default_str();
    sub->add_option("--hidden", cfg.model.hidden, "MLP hidden width")
        ->capture_default_str();
    sub->add_option("--theta-sim", cfg.model.theta_sim,
                    "Similarity gate threshold in [-1,1]")
        ->capture_default_str();
  };
  const auto add_train_flags = [&](CLI::App* sub) {
    sub->add_option("--epochs", cfg.train.epochs, "Training epochs")
        ->capture_default_str();
    sub->add_option("--batch-size", cfg.train.batch_size, "Minibatch size")
        ->capture_default_str();
    sub->add_option("--lr", cfg.train.lr, "Adam learning rate")
        ->capture_default_str();
  };

  // ---- gen-data -----------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_out;
  std::string gen_split_dir;
  std::vector<double> gen_fractions = {0.6, 0.2, 0.2};
  double gen_labeled_fraction = 0.2;
  std::string gen_counts;
  add_common(gen);
  gen->add_option("--out", gen_out, "Output dataset JSONL")->required();
  gen->add_option("--sigma", cfg.data.noise_sigma, "Noise sigma")
      ->capture_default_str();
  gen->add_option("--conflict", cfg.data.conflict_rate,
                  "Modality conflict rate in [0,1]")
      ->capture_default_str();
  gen->add_option("--d-audio", cfg.data.d_audio, "Audio width")
      ->capture_default_str();
  gen->add_option("--d-video", cfg.data.d_video, "Video width")
      ->capture_default_str();
  gen->add_option("--d-text", cfg.data.d_text, "Text width")
      ->capture_default_str();
  gen->add_option("--counts", gen_counts,
                  "Per-class counts, e.g. worry=616,happy=1038");
  gen->add_option("--split-dir", gen_split_dir,
                  "Also write train_labeled/train_unlabeled/val/test here");
  gen->add_option("--fractions", gen_fractions,
                  "Train/val/test fractions for --split-dir")
      ->delimiter(',')
      ->expected(3);
  gen->add_option("--labeled-fraction", gen_labeled_fraction,
                  "Labeled share of the train split for --split-dir")
      ->capture_default_str();
  gen->callback([&]() {
    SyntheticConfig data = cfg.data;
    data.seed = cfg.seed;
    if (!gen_counts.empty()) data.per_class_counts = cli::parse_counts(gen_counts);
    const Dataset ds = generate_synthetic(data);
    write_jsonl(ds, gen_out);
    if (!gen_split_dir.empty()) {
      fs::create_directories(gen_split_dir);
      const SplitResult split = split_dataset(
          ds, {gen_fractions[0], gen_fractions[1], gen_fractions[2]},
          mix_key(cfg.seed, 11));
      const SplitResult pools = split_dataset(
          split.train, {gen_labeled_fraction, 1.0 - gen_labeled_fraction, 0.0},
          mix_key(cfg.seed, 12));
      const fs::path dir = gen_split_dir;
      write_jsonl(pools.train, dir / "train_labeled.jsonl");
      write_jsonl(without_labels(pools.val), dir / "train_unlabeled.jsonl");
      write_jsonl(split.val, dir / "val.jsonl");
      write_jsonl(split.test, dir / "test.jsonl");
    }
    std::cout << "wrote " << ds.size() << " samples to " << gen_out << "\n";
  });

  // ---- train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train one classifier");
  std::string train_data, train_arch, train_out;
  add_common(train);
  add_model_flags(train);
  add_train_flags(train);
  train->add_option("--data", train_data, "Labeled dataset JSONL")->required();
  train->add_option("--arch", train_arch, "audio_only | baseline | agt")
      ->required();
  train->add_option("--out", train_out, "Output model file")->required();
  train->callback([&]() {
    const Dataset ds = read_jsonl(train_data);
    ModelHyper hyper = cfg.model;
    hyper.d_audio = ds.d_audio();
    hyper.d_video = ds.d_video();
    hyper.d_text = ds.d_text();
    auto model = make_model(parse_arch(train_arch), hyper, cfg.seed);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    const TrainResult result = train_classifier(*model, ds, tc);
    save_model(*model, train_out);
    std::cout << "epoch_loss";
    for (double loss : result.epoch_mean_loss) std::cout << ' ' << loss;
    std::cout << "\nwrote " << train_out << "\n";
  });

  // ---- predict --------------------------------------------------------------
  auto* pred = app.add_subcommand("predict", "Write per-sample predictions");
  std::string pred_model, pred_data, pred_out;
  add_common(pred);
  pred->add_option("--model", pred_model, "Model file")->required();
  pred->add_option("--data", pred_data, "Dataset JSONL")->required();
  pred->add_option("--out", pred_out, "Output predictions JSONL")->required();
  pred->callback([&]() {
    auto model = load_model(pred_model);
    const Dataset ds = read_jsonl(pred_data);
    write_predictions_jsonl(predict(*model, ds), pred_out);
    std::cout << "wrote " << ds.size() << " predictions to " << pred_out << "\n";
  });

  // ---- pseudo-label ----------------------------------------------------------
  auto* pseudo = app.add_subcommand(
      "pseudo-label", "Filter predictions by confidence and intersect");
  std::vector<std::string> pseudo_preds;
  std::string pseudo_out;
  std::string pseudo_sources = "audio_only,baseline,agt";
  add_common(pseudo);
  pseudo->add_option("--preds", pseudo_preds,
                     "Prediction JSONL files (one to filter, three to intersect)")
      ->required()
      ->expected(1, 3);
  pseudo->add_option("--threshold", cfg.threshold,
                     "Keep confidence strictly above this")
      ->capture_default_str();
  pseudo->add_option("--sources", pseudo_sources,
                     "Comma-separated source names for the input files");
  pseudo->add_option("--out", pseudo_out, "Output pseudo-label JSONL")
      ->required();
  pseudo->callback([&]() {
    std::vector<std::string> sources;
    {
      std::stringstream ss(pseudo_sources);
      std::string item;
      while (std::getline(ss, item, ',')) sources.push_back(item);
    }
    if (pseudo_preds.size() == 2 || sources.size() < pseudo_preds.size()) {
      throw DataError("pseudo-label needs 1 or 3 --preds files and a source "
                      "name for each");
    }
    std::vector<std::vector<PredictionRecord>> records;
    std::vector<PseudoLabelSet> sets;
    for (std::size_t i = 0; i < pseudo_preds.size(); ++i) {
      records.push_back(read_predictions_jsonl(pseudo_preds[i]));
      sets.push_back(confidence_filter(records[i], cfg.threshold, sources[i]));
    }
    std::vector<PredictionRecord> out;
    if (sets.size() == 1) {
      for (const PseudoLabel& e : sets[0].entries) {
        for (const PredictionRecord& r : records[0]) {
          if (r.id == e.id) {
            PredictionRecord kept = r;
            kept.source = sets[0].source;
            out.push_back(std::move(kept));
            break;
          }
        }
      }
    } else {
      const PseudoLabelSet inter =
          intersect_pseudo_labels({sets[0], sets[1], sets[2]});
      // Carry the probability vector of the least confident of the three
      // agreeing models, so the file stays in the prediction-record schema.
      for (const PseudoLabel& e : inter.entries) {
        for (const auto& model_records : records) {
          for (const PredictionRecord& r : model_records) {
            if (r.id == e.id && r.confidence == e.confidence) {
              PredictionRecord kept = r;
              kept.source = inter.source;
              out.push_back(std::move(kept));
              goto next_entry;
            }
          }
        }
      next_entry:;
      }
    }
    write_predictions_jsonl(out, pseudo_out);
    std::cout << "kept " << out.size() << " pseudo-labels in " << pseudo_out
              << "\n";
  });

  // ---- self-train -------------------------------------------------------------
  auto* selftrain = app.add_subcommand(
      "self-train", "Iterative pseudo-label training of all three models");
  std::string st_labeled, st_unlabeled, st_out_dir;
  add_common(selftrain);
  add_model_flags(selftrain);
  add_train_flags(selftrain);
  selftrain->add_option("--labeled", st_labeled, "Labeled dataset JSONL")
      ->required();
  selftrain->add_option("--unlabeled", st_unlabeled, "Unlabeled dataset JSONL")
      ->required();
  selftrain->add_option("--stages", cfg.stages, "Training stages (>= 1)")
      ->capture_default_str();
  selftrain->add_option("--threshold", cfg.threshold,
                        "Pseudo-label confidence threshold")
      ->capture_default_str();
  selftrain->add_option("--out-dir", st_out_dir, "Output directory")
      ->required();
  selftrain->callback([&]() {
    const Dataset labeled = read_jsonl(st_labeled);
    const Dataset unlabeled = read_jsonl(st_unlabeled);
    SelfTrainConfig sc;
    sc.stages = cfg.stages;
    sc.threshold = cfg.threshold;
    sc.hyper = cfg.model;
    sc.hyper.d_audio = labeled.d_audio();
    sc.hyper.d_video = labeled.d_video();
    sc.hyper.d_text = labeled.d_text();
    sc.train = cfg.train;
    const AblationSeeds seeds = derive_ablation_seeds(cfg.seed);
    sc.model_seeds = {seeds.audio, seeds.baseline, seeds.agt};
    SelfTrainResult result = self_train(labeled, unlabeled, sc);
    fs::create_directories(st_out_dir);
    const fs::path dir = st_out_dir;
    save_model(*result.audio_model, dir / "audio_only.json");
    save_model(*result.baseline_model, dir / "baseline.json");
    save_model(*result.agt_model, dir / "agt.json");
    atomic_write_file(dir / "report.csv",
                      self_train_report_csv(result.stage_reports));
    std::cout << self_train_report_csv(result.stage_reports);
    std::cout << "wrote models to " << st_out_dir << "\n";
  });

  // ---- vote -------------------------------------------------------------------
  auto* vote = app.add_subcommand(
      "vote", "Regularized voting over three prediction files");
  std::string vote_audio, vote_baseline, vote_agt, vote_out, vote_report;
  std::string vote_sensitive;
  add_common(vote);
  vote->add_option("--audio", vote_audio, "Audio-only predictions JSONL")
      ->required();
  vote->add_option("--baseline", vote_baseline, "Baseline predictions JSONL")
      ->required();
  vote->add_option("--agt", vote_agt, "AGT predictions JSONL")->required();
  vote->add_option("--out", vote_out, "Final labels JSONL")->required();
  vote->add_option("--report", vote_report, "Branch-usage CSV");
  vote->add_option("--hubert-weight", cfg.vote.hubert_weight,
                   "Probability of the audio-only prediction")
      ->capture_default_str();
  vote->add_option("--baseline-weight", cfg.vote.baseline_weight,
                   "Probability of the baseline prediction")
      ->capture_default_str();
  vote->add_option("--agt-weight", cfg.vote.agt_weight,
                   "Probability of the AGT prediction")
      ->capture_default_str();
  vote->add_option("--sensitive", vote_sensitive,
                   "Comma-separated sensitive labels (default worry,sad)");
  vote->callback([&]() {
    VoteConfig vc = cfg.vote;
    vc.seed = cfg.seed;
    if (!vote_sensitive.empty()) {
      vc.sensitive_labels = parse_label_set(vote_sensitive);
    }
    auto triples = align_triples(read_predictions_jsonl(vote_audio),
                                 read_predictions_jsonl(vote_baseline),
                                 read_predictions_jsonl(vote_agt));
    const VoteOutcome outcome = vote_all(std::move(triples), vc);
    write_final_labels(outcome.labels, vote_out);
    if (!vote_report.empty()) {
      atomic_write_file(vote_report, outcome.report.to_csv());
    }
    std::cout << outcome.report.to_csv();
  });

  // ---- eval --------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "F1 scores for a prediction file");
  std::string eval_preds, eval_truth, eval_out;
  std::string eval_averaging = "weighted";
  add_common(eval);
  eval->add_option("--preds", eval_preds,
                   "Predictions (records or id/label JSONL)")
      ->required();
  eval->add_option("--truth", eval_truth, "Labeled dataset or id/label JSONL")
      ->required();
  eval->add_option("--averaging", eval_averaging,
                   "weighted | macro | per_class")
      ->check(CLI::IsMember({"weighted", "macro", "per_class"}))
      ->capture_default_str();
  eval->add_option("--out", eval_out, "Also write the scores as CSV");
  eval->callback([&]() {
    const F1Scores scores =
        f1_scores(read_labels_flexible(eval_preds),
                  read_labels_flexible(eval_truth));
    std::ostringstream os;
    os << "metric,value\n";
    if (eval_averaging == "weighted") {
      os << "weighted_f1," << format_fixed4(scores.weighted) << "\n";
    } else if (eval_averaging == "macro") {
      os << "macro_f1," << format_fixed4(scores.macro) << "\n";
    } else {
      for (EmotionLabel l : kAllLabels) {
        os << label_name(l) << "_f1,"
           << format_fixed4(scores.per_class[std::size_t(l)]) << "\n";
      }
    }
    std::cout << os.str();
    if (!eval_out.empty()) atomic_write_file(eval_out, os.str());
  });

  // ---- report --------------------------------------------------------------------
  auto* report = app.add_subcommand(
      "report", "Train/test label distribution CSV for radar plots");
  std::string report_train, report_estimate, report_out;
  add_common(report);
  report->add_option("--train", report_train, "Labeled dataset JSONL")
      ->required();
  report->add_option("--estimate", report_estimate,
                     "JSON map of probed per-label test values")
      ->required();
  report->add_option("--out", report_out, "Output CSV")->required();
  report->callback([&]() {
    const Dataset train_ds = read_jsonl(report_train);
    std::ifstream in(report_estimate);
    if (!in) throw DataError("cannot open '" + report_estimate + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw DataError(report_estimate + ": malformed JSON (" + e.what() + ")");
    }
    std::map<EmotionLabel, double> estimate;
    for (const auto& [key, value] : j.items()) {
      estimate[label_from_name(key)] = value.get<double>();
    }
    const DistributionReport dist = distribution_report(train_ds, estimate);
    atomic_write_file(report_out, dist.to_csv());
    std::cout << dist.to_csv();
  });

  // ---- ablate --------------------------------------------------------------------
  auto* ablate = app.add_subcommand(
      "ablate", "Strategy grid (N / P / P+V) on the synthetic benchmark");
  std::string ab_out, ab_models = "baseline,agt", ab_strategies = "N,P,P+V";
  std::string ab_labeled, ab_unlabeled, ab_test;
  add_common(ablate);
  add_model_flags(ablate);
  add_train_flags(ablate);
  ablate->add_option("--out", ab_out, "Output CSV")->required();
  ablate->add_option("--models", ab_models, "Comma-separated model rows")
      ->capture_default_str();
  ablate->add_option("--strategies", ab_strategies,
                     "Comma-separated strategy columns from N,P,P+V")
      ->capture_default_str();
  ablate->add_option("--stages", cfg.stages, "Self-training stages")
      ->capture_default_str();
  ablate->add_option("--threshold", cfg.threshold,
                     "Pseudo-label confidence threshold")
      ->capture_default_str();
  ablate->add_option("--labeled", ab_labeled,
                     "Use this labeled JSONL instead of the synthetic benchmark");
  ablate->add_option("--unlabeled", ab_unlabeled, "Unlabeled JSONL");
  ablate->add_option("--test", ab_test, "Held-out labeled JSONL");
  ablate->callback([&]() {
    AblationInputs inputs;
    if (!ab_labeled.empty() || !ab_unlabeled.empty() || !ab_test.empty()) {
      if (ab_labeled.empty() || ab_unlabeled.empty() || ab_test.empty()) {
        throw DataError("--labeled, --unlabeled and --test must be given "
                        "together");
      }
      inputs.labeled = read_jsonl(ab_labeled);
      inputs.unlabeled = read_jsonl(ab_unlabeled);
      inputs.test = read_jsonl(ab_test);
    } else {
      ReferenceBenchmarkConfig bench = cfg.benchmark;
      bench.seed = cfg.seed;
      inputs = make_reference_benchmark(bench);
    }
    AblationConfig ac;
    ac.models.clear();
    {
      std::stringstream ss(ab_models);
      std::string item;
      while (std::getline(ss, item, ',')) ac.models.push_back(parse_arch(item));
    }
    ac.strategies.clear();
    {
      std::stringstream ss(ab_strategies);
      std::string item;
      while (std::getline(ss, item, ',')) ac.strategies.push_back(item);
    }
    ac.hyper = cfg.model;
    ac.hyper.d_audio = inputs.labeled.d_audio();
    ac.hyper.d_video = inputs.labeled.d_video();
    ac.hyper.d_text = inputs.labeled.d_text();
    ac.train = cfg.train;
    ac.stages = cfg.stages;
    ac.threshold = cfg.threshold;
    ac.vote = cfg.vote;
    ac.master_seed = cfg.seed;
    const AblationResult result = ablation_run(inputs, ac);
    atomic_write_file(ab_out, result.to_csv());
    std::cout << result.to_csv();
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 1;
  } catch (const NumericsError& e) {
    std::cerr << "error: numerics: " << e.what() << "\n";
    return 1;
  } catch (const TensorError& e) {
    std::cerr << "error: shape: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
