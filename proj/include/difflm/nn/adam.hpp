#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "difflm/nn/parameter_store.hpp"

namespace difflm::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias-corrected moments. Moment buffers are created on the first
// step and follow the store's insertion order.
template <typename Real>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  size_t steps_taken() const { return step_; }

  void step(ParameterStore<Real>& store) { step(store, config_.learning_rate); }

  void step(ParameterStore<Real>& store, double learning_rate) {
    for (const auto& e : store.entries()) {
      for (Real g : e.grad.values()) {
        if (!std::isfinite(g)) {
          throw std::runtime_error("non-finite gradient in parameter '" + e.name + "'");
        }
      }
    }
    if (first_.empty()) {
      for (const auto& e : store.entries()) {
        first_.emplace_back(e.value.size(), 0.0);
        second_.emplace_back(e.value.size(), 0.0);
      }
    }
    if (first_.size() != store.size()) {
      throw std::logic_error("parameter store changed size between Adam steps");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (size_t p = 0; p < store.size(); ++p) {
      auto& e = store.entry(p);
      std::vector<double>& m = first_[p];
      std::vector<double>& v = second_[p];
      for (size_t i = 0; i < e.value.size(); ++i) {
        const double g = static_cast<double>(e.grad[i]);
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        const double update = learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
        e.value[i] = static_cast<Real>(static_cast<double>(e.value[i]) - update);
      }
    }
  }

 private:
  AdamConfig config_;
  size_t step_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

}  // namespace difflm::nn
