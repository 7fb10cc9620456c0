#include "agtfuse/optim.hpp"

#include <cmath>

namespace agtfuse {

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.lr < 0.0 || config_.beta1 < 0.0 || config_.beta1 >= 1.0 ||
      config_.beta2 < 0.0 || config_.beta2 >= 1.0 || config_.eps <= 0.0) {
    throw TensorError("invalid Adam configuration");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    auto data = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    const bool has_grad = p.has_grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = has_grad ? p.grad()[i] : 0.0;
      if (!std::isfinite(g)) {
        throw NumericsError("non-finite gradient in Adam step");
      }
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      if (!std::isfinite(data[i])) {
        throw NumericsError("non-finite parameter after Adam step");
      }
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace agtfuse
