#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "agtfuse/data.hpp"
#include "agtfuse/eval.hpp"
#include "agtfuse/models.hpp"
#include "agtfuse/vote.hpp"

namespace agtfuse::cli {

/// Declarative run configuration. Every field has a documented default; a
/// JSON config file may override any subset, and command-line flags override
/// the file. Unknown keys anywhere in the file are rejected.
struct RunConfig {
  std::uint64_t seed = 0;

  // data section
  SyntheticConfig data = [] {
    SyntheticConfig d;
    d.per_class_counts = {
        {EmotionLabel::kWorry, 616},  {EmotionLabel::kHappy, 1038},
        {EmotionLabel::kNeutral, 1248}, {EmotionLabel::kAngry, 1208},
        {EmotionLabel::kSurprise, 190}, {EmotionLabel::kSad, 730},
    };
    d.noise_sigma = 0.3;
    return d;
  }();

  ModelHyper model;

  TrainConfig train;

  // semisup section
  std::size_t stages = 2;
  double threshold = 0.9;

  VoteConfig vote;

  // benchmark section (ablate)
  ReferenceBenchmarkConfig benchmark;
};

/// Loads and validates a JSON config file over the defaults.
RunConfig load_run_config(const std::filesystem::path& path);

/// Parses "worry=616,happy=1038" style per-class count lists.
std::map<EmotionLabel, std::size_t> parse_counts(const std::string& text);

}  // namespace agtfuse::cli
