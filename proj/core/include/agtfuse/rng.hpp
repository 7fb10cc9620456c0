#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace agtfuse {

/// Finalizer of the splitmix64 generator. Used on its own as a 64-bit mixing
/// function for key derivation.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// Derives an independent stream seed from a base seed and up to two tags.
/// Every derived seed in the project (class/modality prototypes, per-cell
/// ablation seeds, ...) goes through this one function so that streams are
/// reproducible across implementations. See docs/formats.md for the contract.
constexpr std::uint64_t mix_key(std::uint64_t seed, std::uint64_t a,
                                std::uint64_t b = 0) {
  std::uint64_t h = mix64(seed + kGoldenGamma + a);
  h = mix64(h + kGoldenGamma + b);
  return h;
}

/// splitmix64: state advances by the golden gamma, output is the mixed state.
///
/// This is the single RNG used everywhere randomness is consumed (parameter
/// init, shuffles, synthetic data, voting). Uniform doubles are derived as
/// u = (next() >> 11) * 2^-53, so u is in [0, 1). The exact constants are
/// part of the file-format contract (docs/formats.md): a reimplementation in
/// another language must reproduce every stream bit for bit.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += kGoldenGamma);
    return mix64(z);
  }

  /// Uniform in [0, 1), 53 random bits.
  double next_double() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Modulo reduction; the bias is irrelevant at
  /// the n values used here (n << 2^64) and keeps the stream easy to
  /// reproduce elsewhere.
  std::uint64_t next_below(std::uint64_t n) { return next() % n; }

  /// Standard normal via Box-Muller. Draws two uniforms and caches the
  /// second variate, so consumption order stays deterministic.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // 1 - u keeps the argument of log strictly positive.
    const double u1 = 1.0 - next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Fisher-Yates shuffle consuming one draw per element (from the back).
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace agtfuse
