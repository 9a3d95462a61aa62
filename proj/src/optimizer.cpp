#include "protoconcepts/optimizer.hpp"

#include <cmath>

namespace protoconcepts {

AdamGroup::AdamGroup(std::vector<Param*> params, double learning_rate, double weight_decay, AdamSettings settings)
    : params_(std::move(params)), lr_(learning_rate), decay_(weight_decay), settings_(settings) {
  for (const auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void AdamGroup::step(double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k] * grad_scale + decay_ * p.value[k];
      m[k] = settings_.beta1 * m[k] + (1.0 - settings_.beta1) * g;
      v[k] = settings_.beta2 * v[k] + (1.0 - settings_.beta2) * g * g;
      p.value[k] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + settings_.epsilon);
    }
    p.zero_grad();
  }
}

}  // namespace protoconcepts
