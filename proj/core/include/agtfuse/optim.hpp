#pragma once

#include <cstdint>
#include <vector>

#include "agtfuse/tensor.hpp"

namespace agtfuse {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Holds first/second moment buffers per parameter
/// and updates parameter values in place; this is the one place besides
/// initialization that writes through mutable_data(). A parameter with no
/// accumulated gradient is treated as having gradient zero.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, AdamConfig config = {});

  void step();
  void zero_grad();

  std::int64_t steps_taken() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
  AdamConfig config_;
};

}  // namespace agtfuse
