#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "protoconcepts/geometry.hpp"

namespace protoconcepts {

struct LossWeights {
  double ce = 1.0;
  double clstk = 0.8;
  double sep = -0.08;
  double rad = 0.01;
  int k = 10;

  void validate() const;
};

/// ProtoPNet-Concepts weights (1.0, 0.8, -0.08, 0.01), k = 10.
LossWeights protopnet_concepts_weights();
/// ProtoPool-Concepts weights (1.0, 0.8, -0.08, 3e-3), k = 10.
LossWeights protopool_concepts_weights();
/// TesNet-Concepts weights (1.0, 0.8, -0.2, 3e-5), k = 3.
LossWeights tesnet_concepts_weights();

/// Read-only view of which prototypes provide positive evidence for each class.
class ClassAssignmentView {
 public:
  ClassAssignmentView() = default;
  /// `assignment` is an m x C 0/1 matrix, row-major.
  ClassAssignmentView(std::span<const int> assignment, int num_prototypes, int num_classes);

  static ClassAssignmentView class_specific(int per_class, int num_classes);

  int num_prototypes() const { return num_prototypes_; }
  int num_classes() const { return num_classes_; }
  const std::vector<int>& prototypes_of(int cls) const { return by_class_.at(static_cast<size_t>(cls)); }
  bool assigned(int prototype, int cls) const {
    return matrix_[static_cast<size_t>(prototype) * num_classes_ + cls] != 0;
  }
  const std::vector<int>& matrix() const { return matrix_; }

 private:
  int num_prototypes_ = 0;
  int num_classes_ = 0;
  std::vector<int> matrix_;
  std::vector<std::vector<int>> by_class_;
};

/// min over patches of ball_distance (clamped); equals max(min center distance, r_eff).
double min_patch_distance(const LatentPatchGrid& grid, const PrototypeBall& ball, const GeometryConfig& cfg);

/// Sum of the k smallest values (stable on ties by index).
double sum_k_smallest(std::span<const double> values, int k);

/// Mean over images of the summed k smallest min-patch ball distances to the
/// prototypes assigned to the image's class.
double topk_cluster_loss(std::span<const LatentPatchGrid> grids, std::span<const int> labels,
                         std::span<const PrototypeBall> balls, const ClassAssignmentView& assign, int k,
                         const GeometryConfig& cfg);

/// Sum of squared effective radii.
double radius_loss(std::span<const PrototypeBall> balls, const GeometryConfig& cfg);
/// d radius_loss / d radius_param for one ball.
double radius_loss_gradient(const PrototypeBall& ball, const GeometryConfig& cfg);

/// Mean over images of the smallest min-patch ball distance to any prototype
/// not assigned to the image's class. Images without such prototypes are skipped.
double separation_loss(std::span<const LatentPatchGrid> grids, std::span<const int> labels,
                       std::span<const PrototypeBall> balls, const ClassAssignmentView& assign,
                       const GeometryConfig& cfg);

double composite_objective(double ce, double clstk, double sep, double rad, const LossWeights& w);

// Extension point for model-specific auxiliary objectives (for example the
// subspace-separation and orthogonality terms of TesNet). Ships empty.
class AuxiliaryLoss {
 public:
  virtual ~AuxiliaryLoss() = default;
  virtual std::string name() const = 0;
  /// Adds its gradient to `center_grads` (m x D, row-major) and returns the loss value.
  virtual double evaluate(std::span<const PrototypeBall> balls, std::span<double> center_grads) const = 0;
};

class AuxiliaryLossRegistry {
 public:
  static AuxiliaryLossRegistry& instance();
  void add(std::shared_ptr<const AuxiliaryLoss> loss);
  std::shared_ptr<const AuxiliaryLoss> find(const std::string& name) const;

 private:
  std::map<std::string, std::shared_ptr<const AuxiliaryLoss>> losses_;
};

}  // namespace protoconcepts
