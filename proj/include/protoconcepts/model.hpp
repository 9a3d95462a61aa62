#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "protoconcepts/backbone.hpp"
#include "protoconcepts/geometry.hpp"
#include "protoconcepts/image_io.hpp"
#include "protoconcepts/losses.hpp"

namespace protoconcepts {

/// Prototype-to-class weights (m x C, row-major) with a 0/1 prune mask.
class EvidenceLayer {
 public:
  EvidenceLayer() = default;
  EvidenceLayer(ClassAssignmentView assignment, std::vector<double> weights);

  int num_prototypes() const { return assignment_.num_prototypes(); }
  int num_classes() const { return assignment_.num_classes(); }

  double weight(int prototype, int cls) const { return weights_[static_cast<size_t>(prototype) * num_classes() + cls]; }
  double& weight(int prototype, int cls) { return weights_[static_cast<size_t>(prototype) * num_classes() + cls]; }
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }

  const std::vector<int>& prune_mask() const { return mask_; }
  void set_prune_mask(std::vector<int> mask);
  bool active(int prototype) const { return mask_[static_cast<size_t>(prototype)] != 0; }

  const ClassAssignmentView& assignment() const { return assignment_; }

  /// logits[c] = sum_j sim[j] * mask[j] * w[j][c]. Terms are summed in sorted
  /// order, so the result does not depend on prototype order.
  std::vector<double> logits(std::span<const double> similarities) const;

 private:
  ClassAssignmentView assignment_;
  std::vector<double> weights_;
  std::vector<int> mask_;
};

/// w[j][c] = 1 for the owning class, -0.5 elsewhere; mask all ones.
EvidenceLayer init_evidence_class_specific(int per_class, int num_classes);
/// Same initialization over a fixed m x C 0/1 assignment (prototypes may be shared).
EvidenceLayer init_evidence_shared(std::span<const int> assignment, int num_prototypes, int num_classes);

struct ModelSpec {
  std::string backbone = "tiny-cnn";
  int image_size = 64;
  int latent_dim = 16;
  Geometry geometry = Geometry::Log;
  GeometryConfig geometry_config;
  double radius_init = 0.5;
  int prototypes_per_class = 10;
  int num_classes = 4;
  /// Optional m x C 0/1 matrix for shared assignment; empty means class-specific.
  std::vector<int> shared_assignment;
  int shared_prototypes = 0;
  std::uint64_t seed = 1;
};

class ProtoConceptsNet {
 public:
  ProtoConceptsNet() = default;
  ProtoConceptsNet(const ProtoConceptsNet& other);
  ProtoConceptsNet& operator=(const ProtoConceptsNet& other);
  ProtoConceptsNet(ProtoConceptsNet&&) noexcept = default;
  ProtoConceptsNet& operator=(ProtoConceptsNet&&) noexcept = default;

  std::unique_ptr<BackboneAdapter> backbone;
  AddOnLayers addon;
  std::vector<PrototypeBall> balls;
  EvidenceLayer evidence;
  GeometryConfig geometry_config;
  Geometry geometry = Geometry::Log;
  int image_size = 64;

  int num_prototypes() const { return static_cast<int>(balls.size()); }
  int num_classes() const { return evidence.num_classes(); }
  int latent_dim() const { return addon.latent_dim(); }
  int grid_size() const { return backbone->output_size(image_size); }

  /// Throws if balls, evidence and add-on disagree.
  void validate() const;
};

ProtoConceptsNet build_net(const ModelSpec& spec);

/// RGB image -> 3 x H x W tensor scaled to [0, 1].
Tensor3 image_to_tensor(const Image& image);

struct NetTrace {
  LayerTrace backbone;
  LayerTrace addon;
};

/// f then the add-on layers, laid out as a patch grid. Throws on resolution mismatch.
LatentPatchGrid latent_grid(const ProtoConceptsNet& net, const Image& image, const std::string& id = {},
                            NetTrace* trace = nullptr);

struct PrototypeActivation {
  double similarity = 0.0;   ///< max over the clamped similarity map
  GridCoord argmax;          ///< row-major-first argmax of the clamped map
  double min_distance = 0.0; ///< smallest unclamped center distance over patches
  GridCoord nearest;         ///< patch attaining min_distance
};

std::vector<PrototypeActivation> prototype_activations(const ProtoConceptsNet& net, const LatentPatchGrid& grid,
                                                       std::vector<SimilarityMap>* maps = nullptr);

struct ForwardOutput {
  std::vector<std::vector<double>> logits;        ///< batch x C
  std::vector<std::vector<double>> similarities;  ///< batch x m
  std::vector<std::vector<SimilarityMap>> maps;   ///< batch x m
};

ForwardOutput forward(const ProtoConceptsNet& net, std::span<const Image> images);

int argmax_class(std::span<const double> logits);

struct EvidenceTerm {
  int prototype = 0;
  double similarity = 0.0;
  double weight = 0.0;
  double contribution = 0.0;
};

struct ClassEvidence {
  int cls = 0;
  double logit = 0.0;
  std::vector<EvidenceTerm> terms;  ///< unmasked prototypes only
};

/// Per-class scoresheet: each unmasked prototype's similarity x weight.
std::vector<ClassEvidence> logit_decomposition(const ProtoConceptsNet& net, const Image& image);
std::vector<ClassEvidence> logit_decomposition(const ProtoConceptsNet& net, std::span<const double> similarities);

}  // namespace protoconcepts
