#pragma once

#include <vector>

#include "protoconcepts/tensor.hpp"

namespace protoconcepts {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over a fixed list of parameter tensors sharing one learning rate.
/// Only tensors registered here are ever written.
class AdamGroup {
 public:
  AdamGroup() = default;
  AdamGroup(std::vector<Param*> params, double learning_rate, double weight_decay, AdamSettings settings);

  /// One update from the accumulated gradients (scaled by grad_scale), then zeroes them.
  void step(double grad_scale = 1.0);
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  bool empty() const { return params_.empty(); }

 private:
  std::vector<Param*> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_ = 0.0;
  double decay_ = 0.0;
  AdamSettings settings_;
  long long t_ = 0;
};

}  // namespace protoconcepts
