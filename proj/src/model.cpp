#include "protoconcepts/model.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <random>

#include "protoconcepts/diagnostics.hpp"

namespace protoconcepts {

EvidenceLayer::EvidenceLayer(ClassAssignmentView assignment, std::vector<double> weights)
    : assignment_(std::move(assignment)), weights_(std::move(weights)), mask_(static_cast<size_t>(num_prototypes()), 1) {
  if (weights_.size() != static_cast<size_t>(num_prototypes()) * num_classes()) {
    throw Error("evidence weights must be m x C");
  }
}

void EvidenceLayer::set_prune_mask(std::vector<int> mask) {
  if (mask.size() != static_cast<size_t>(num_prototypes())) throw Error("prune mask must have one entry per prototype");
  for (int v : mask)
    if (v != 0 && v != 1) throw Error("prune mask entries must be 0 or 1");
  mask_ = std::move(mask);
}

std::vector<double> EvidenceLayer::logits(std::span<const double> similarities) const {
  if (similarities.size() != static_cast<size_t>(num_prototypes())) {
    throw Error("evidence layer expects " + std::to_string(num_prototypes()) + " similarities");
  }
  const int m = num_prototypes();
  const int c_count = num_classes();
  std::vector<double> out(static_cast<size_t>(c_count), 0.0);
  std::vector<double> terms;
  terms.reserve(static_cast<size_t>(m));
  for (int c = 0; c < c_count; ++c) {
    terms.clear();
    for (int j = 0; j < m; ++j)
      if (active(j)) terms.push_back(similarities[static_cast<size_t>(j)] * weight(j, c));
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    out[static_cast<size_t>(c)] = s;
  }
  return out;
}

namespace {
std::vector<double> initial_weights(const ClassAssignmentView& a) {
  std::vector<double> w(static_cast<size_t>(a.num_prototypes()) * a.num_classes());
  for (int j = 0; j < a.num_prototypes(); ++j)
    for (int c = 0; c < a.num_classes(); ++c)
      w[static_cast<size_t>(j) * a.num_classes() + c] = a.assigned(j, c) ? 1.0 : -0.5;
  return w;
}
}  // namespace

EvidenceLayer init_evidence_class_specific(int per_class, int num_classes) {
  if (per_class < 1) throw ConfigError("prototypes per class must be >= 1");
  if (num_classes < 1) throw ConfigError("number of classes must be >= 1");
  auto view = ClassAssignmentView::class_specific(per_class, num_classes);
  auto w = initial_weights(view);
  return {std::move(view), std::move(w)};
}

EvidenceLayer init_evidence_shared(std::span<const int> assignment, int num_prototypes, int num_classes) {
  ClassAssignmentView view(assignment, num_prototypes, num_classes);
  auto w = initial_weights(view);
  return {std::move(view), std::move(w)};
}

ProtoConceptsNet::ProtoConceptsNet(const ProtoConceptsNet& other)
    : backbone(other.backbone ? other.backbone->clone() : nullptr),
      addon(other.addon),
      balls(other.balls),
      evidence(other.evidence),
      geometry_config(other.geometry_config),
      geometry(other.geometry),
      image_size(other.image_size) {}

ProtoConceptsNet& ProtoConceptsNet::operator=(const ProtoConceptsNet& other) {
  if (this != &other) {
    ProtoConceptsNet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void ProtoConceptsNet::validate() const {
  if (!backbone) throw Error("network has no backbone");
  if (balls.size() != static_cast<size_t>(evidence.num_prototypes())) {
    throw Error("prototype count disagrees with the evidence layer");
  }
  for (const auto& b : balls) {
    if (b.geometry != geometry) throw Error("all prototypes must share the network geometry");
    if (b.dim() != latent_dim()) throw Error("prototype dimension disagrees with the add-on layers");
    require_finite(b.center, "prototype center");
  }
}

ProtoConceptsNet build_net(const ModelSpec& spec) {
  spec.geometry_config.validate();
  if (spec.latent_dim < 1) throw ConfigError("model.latent_dim must be >= 1");
  if (spec.geometry == Geometry::Cosine && spec.radius_init > std::numbers::pi) {
    warn("cosine radius initialization " + std::to_string(spec.radius_init) +
         " exceeds pi; the effective angular radius is clamped to pi");
  }
  std::mt19937_64 rng(spec.seed);
  ProtoConceptsNet net;
  net.backbone = make_backbone(spec.backbone, rng);
  net.addon = AddOnLayers(net.backbone->output_channels(), spec.latent_dim, spec.geometry, rng);
  net.geometry = spec.geometry;
  net.geometry_config = spec.geometry_config;
  net.image_size = spec.image_size;
  if (net.backbone->output_size(spec.image_size) < 1) throw ConfigError("model.image_size too small for the backbone");

  int m = 0;
  if (spec.shared_assignment.empty()) {
    net.evidence = init_evidence_class_specific(spec.prototypes_per_class, spec.num_classes);
    m = spec.prototypes_per_class * spec.num_classes;
  } else {
    m = spec.shared_prototypes;
    net.evidence = init_evidence_shared(spec.shared_assignment, m, spec.num_classes);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  net.balls.resize(static_cast<size_t>(m));
  for (auto& b : net.balls) {
    b.center.resize(static_cast<size_t>(spec.latent_dim));
    for (auto& v : b.center) v = unit(rng);
    b.radius_param = spec.radius_init;
    b.geometry = spec.geometry;
  }
  return net;
}

Tensor3 image_to_tensor(const Image& image) {
  const Image rgb = to_rgb(image);
  Tensor3 t(3, rgb.height, rgb.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < rgb.height; ++y)
      for (int x = 0; x < rgb.width; ++x) t.at(c, y, x) = rgb.at(x, y, c) / 255.0;
  return t;
}

LatentPatchGrid latent_grid(const ProtoConceptsNet& net, const Image& image, const std::string& id, NetTrace* trace) {
  if (image.width != net.image_size || image.height != net.image_size) {
    throw Error("resolution mismatch: network expects " + std::to_string(net.image_size) + "x" +
                std::to_string(net.image_size) + ", got " + std::to_string(image.width) + "x" +
                std::to_string(image.height));
  }
  const Tensor3 features = net.backbone->forward(image_to_tensor(image), trace ? &trace->backbone : nullptr);
  const Tensor3 z = net.addon.forward(features, trace ? &trace->addon : nullptr);
  LatentPatchGrid grid(z.height, z.width, z.channels, id);
  for (int r = 0; r < z.height; ++r)
    for (int c = 0; c < z.width; ++c) {
      auto p = grid.patch(r, c);
      for (int d = 0; d < z.channels; ++d) p[static_cast<size_t>(d)] = z.at(d, r, c);
    }
  require_finite(grid.values, "latent grid");
  return grid;
}

std::vector<PrototypeActivation> prototype_activations(const ProtoConceptsNet& net, const LatentPatchGrid& grid,
                                                       std::vector<SimilarityMap>* maps) {
  std::vector<PrototypeActivation> out(net.balls.size());
  if (maps) maps->clear();
  for (size_t j = 0; j < net.balls.size(); ++j) {
    const auto& ball = net.balls[j];
    SimilarityMap map = similarity_map(grid, ball, net.geometry_config, static_cast<int>(j));
    const auto pooled = max_pool_similarity(map);
    auto& a = out[j];
    a.similarity = pooled.value;
    a.argmax = pooled.at;
    a.min_distance = std::numeric_limits<double>::infinity();
    for (int r = 0; r < grid.height; ++r)
      for (int c = 0; c < grid.width; ++c) {
        const double d = center_distance(grid.patch(r, c), ball, net.geometry_config);
        if (d < a.min_distance) {
          a.min_distance = d;
          a.nearest = {r, c};
        }
      }
    if (maps) maps->push_back(std::move(map));
  }
  return out;
}

ForwardOutput forward(const ProtoConceptsNet& net, std::span<const Image> images) {
  if (images.empty()) throw Error("forward: empty batch");
  for (const auto& img : images) {
    if (img.width != net.image_size || img.height != net.image_size) {
      throw Error("resolution mismatch: network expects " + std::to_string(net.image_size) + "x" +
                  std::to_string(net.image_size) + ", got " + std::to_string(img.width) + "x" +
                  std::to_string(img.height));
    }
  }
  ForwardOutput out;
  for (const auto& img : images) {
    const auto grid = latent_grid(net, img);
    std::vector<SimilarityMap> maps;
    const auto acts = prototype_activations(net, grid, &maps);
    std::vector<double> sims;
    sims.reserve(acts.size());
    for (const auto& a : acts) sims.push_back(a.similarity);
    out.logits.push_back(net.evidence.logits(sims));
    out.similarities.push_back(std::move(sims));
    out.maps.push_back(std::move(maps));
  }
  return out;
}

int argmax_class(std::span<const double> logits) {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::vector<ClassEvidence> logit_decomposition(const ProtoConceptsNet& net, std::span<const double> similarities) {
  const auto logits = net.evidence.logits(similarities);
  std::vector<ClassEvidence> out;
  for (int c = 0; c < net.num_classes(); ++c) {
    ClassEvidence ev{c, logits[static_cast<size_t>(c)], {}};
    for (int j = 0; j < net.num_prototypes(); ++j) {
      if (!net.evidence.active(j)) continue;
      const double s = similarities[static_cast<size_t>(j)];
      const double w = net.evidence.weight(j, c);
      ev.terms.push_back({j, s, w, s * w});
    }
    out.push_back(std::move(ev));
  }
  return out;
}

std::vector<ClassEvidence> logit_decomposition(const ProtoConceptsNet& net, const Image& image) {
  const auto fw = forward(net, std::span<const Image>(&image, 1));
  return logit_decomposition(net, fw.similarities.front());
}

}  // namespace protoconcepts
