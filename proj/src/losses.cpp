#include "protoconcepts/losses.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "protoconcepts/diagnostics.hpp"

namespace protoconcepts {

void LossWeights::validate() const {
  if (k < 1) throw ConfigError("losses.k must be >= 1");
  if (!(ce > 0.0)) throw ConfigError("losses.w_ce must be positive");
}

LossWeights protopnet_concepts_weights() { return {1.0, 0.8, -0.08, 0.01, 10}; }
LossWeights protopool_concepts_weights() { return {1.0, 0.8, -0.08, 3e-3, 10}; }
LossWeights tesnet_concepts_weights() { return {1.0, 0.8, -0.2, 3e-5, 3}; }

ClassAssignmentView::ClassAssignmentView(std::span<const int> assignment, int num_prototypes, int num_classes)
    : num_prototypes_(num_prototypes), num_classes_(num_classes), matrix_(assignment.begin(), assignment.end()) {
  if (matrix_.size() != static_cast<size_t>(num_prototypes) * num_classes) {
    throw Error("class assignment matrix has wrong size");
  }
  by_class_.resize(static_cast<size_t>(num_classes));
  for (int j = 0; j < num_prototypes; ++j) {
    for (int c = 0; c < num_classes; ++c) {
      const int v = matrix_[static_cast<size_t>(j) * num_classes + c];
      if (v != 0 && v != 1) throw Error("class assignment entries must be 0 or 1");
      if (v) by_class_[static_cast<size_t>(c)].push_back(j);
    }
  }
}

ClassAssignmentView ClassAssignmentView::class_specific(int per_class, int num_classes) {
  const int m = per_class * num_classes;
  std::vector<int> a(static_cast<size_t>(m) * num_classes, 0);
  for (int j = 0; j < m; ++j) a[static_cast<size_t>(j) * num_classes + j / per_class] = 1;
  return {a, m, num_classes};
}

double min_patch_distance(const LatentPatchGrid& grid, const PrototypeBall& ball, const GeometryConfig& cfg) {
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c) best = std::min(best, ball_distance(grid.patch(r, c), ball, cfg));
  return best;
}

double sum_k_smallest(std::span<const double> values, int k) {
  std::vector<size_t> order(values.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return values[a] < values[b]; });
  double s = 0.0;
  for (int i = 0; i < k && static_cast<size_t>(i) < order.size(); ++i) s += values[order[static_cast<size_t>(i)]];
  return s;
}

double topk_cluster_loss(std::span<const LatentPatchGrid> grids, std::span<const int> labels,
                         std::span<const PrototypeBall> balls, const ClassAssignmentView& assign, int k,
                         const GeometryConfig& cfg) {
  if (grids.size() != labels.size()) throw Error("topk_cluster_loss: grids and labels differ in length");
  if (grids.empty()) return 0.0;
  double total = 0.0;
  for (size_t i = 0; i < grids.size(); ++i) {
    const auto& pool = assign.prototypes_of(labels[i]);
    if (static_cast<int>(pool.size()) < k) {
      throw Error("topk_cluster_loss: k=" + std::to_string(k) + " exceeds the " + std::to_string(pool.size()) +
                  " prototypes of class " + std::to_string(labels[i]));
    }
    std::vector<double> d;
    d.reserve(pool.size());
    for (int j : pool) d.push_back(min_patch_distance(grids[i], balls[static_cast<size_t>(j)], cfg));
    total += sum_k_smallest(d, k);
  }
  return total / static_cast<double>(grids.size());
}

double radius_loss(std::span<const PrototypeBall> balls, const GeometryConfig& cfg) {
  double s = 0.0;
  for (const auto& b : balls) {
    const double r = effective_radius(b, cfg);
    s += r * r;
  }
  return s;
}

double radius_loss_gradient(const PrototypeBall& ball, const GeometryConfig& cfg) {
  return 2.0 * effective_radius(ball, cfg) * effective_radius_slope(ball, cfg);
}

double separation_loss(std::span<const LatentPatchGrid> grids, std::span<const int> labels,
                       std::span<const PrototypeBall> balls, const ClassAssignmentView& assign,
                       const GeometryConfig& cfg) {
  if (grids.size() != labels.size()) throw Error("separation_loss: grids and labels differ in length");
  double total = 0.0;
  size_t counted = 0;
  bool any_wrong = false;
  for (size_t i = 0; i < grids.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < balls.size(); ++j) {
      if (assign.assigned(static_cast<int>(j), labels[i])) continue;
      best = std::min(best, min_patch_distance(grids[i], balls[j], cfg));
    }
    if (best == std::numeric_limits<double>::infinity()) continue;
    any_wrong = true;
    total += best;
    ++counted;
  }
  if (!grids.empty() && !any_wrong) throw Error("separation_loss: no wrong-class prototypes exist");
  return counted ? total / static_cast<double>(counted) : 0.0;
}

double composite_objective(double ce, double clstk, double sep, double rad, const LossWeights& w) {
  return w.ce * ce + w.clstk * clstk + w.sep * sep + w.rad * rad;
}

AuxiliaryLossRegistry& AuxiliaryLossRegistry::instance() {
  static AuxiliaryLossRegistry registry;
  return registry;
}

void AuxiliaryLossRegistry::add(std::shared_ptr<const AuxiliaryLoss> loss) { losses_[loss->name()] = std::move(loss); }

std::shared_ptr<const AuxiliaryLoss> AuxiliaryLossRegistry::find(const std::string& name) const {
  auto it = losses_.find(name);
  return it == losses_.end() ? nullptr : it->second;
}

}  // namespace protoconcepts
