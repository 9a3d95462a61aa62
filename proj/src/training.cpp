#include "protoconcepts/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "protoconcepts/diagnostics.hpp"

namespace fs = std::filesystem;

namespace protoconcepts {

std::string to_string(StageKind kind) {
  switch (kind) {
    case StageKind::Warmup: return "warmup";
    case StageKind::Joint: return "joint";
    case StageKind::Finetune: return "finetune";
  }
  return "?";
}

std::string to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::Backbone: return "backbone";
    case ParamGroup::AddOn: return "addon";
    case ParamGroup::Centers: return "centers";
    case ParamGroup::Radii: return "radii";
    case ParamGroup::LastLayer: return "last_layer";
  }
  return "?";
}

void StageSpec::validate() const {
  if (epochs < 0) throw ConfigError(to_string(kind) + " stage: epochs must be >= 0");
  for (double lr : learning_rates)
    if (lr < 0.0 || !std::isfinite(lr)) throw ConfigError(to_string(kind) + " stage: learning rates must be >= 0");
  if (kind == StageKind::Warmup && trains(ParamGroup::Backbone)) {
    throw ConfigError("warmup stage must not train the backbone (schedule.warmup.lr_backbone must be 0)");
  }
  if (kind == StageKind::Finetune) {
    for (int g = 0; g < kParamGroupCount; ++g) {
      const auto group = static_cast<ParamGroup>(g);
      if (group != ParamGroup::LastLayer && trains(group)) {
        throw ConfigError("finetune stage trains only the last layer (schedule.finetune.lr_" + to_string(group) +
                          " must be 0)");
      }
    }
  }
  weights.validate();
  if (l1 < 0.0) throw ConfigError("losses.l1 must be >= 0");
}

void TrainingSchedule::validate() const {
  const StageKind order[] = {StageKind::Warmup, StageKind::Joint, StageKind::Finetune};
  if (stages.size() != 3) throw ConfigError("schedule must list warmup, joint and finetune stages");
  for (size_t i = 0; i < 3; ++i) {
    if (stages[i].kind != order[i]) throw ConfigError("stages must appear in order warmup -> joint -> finetune");
    stages[i].validate();
  }
  if (optimizer.batch_size < 1) throw ConfigError("schedule.batch_size must be >= 1");
}

const StageSpec& TrainingSchedule::stage(StageKind kind) const {
  for (const auto& s : stages)
    if (s.kind == kind) return s;
  throw ConfigError("schedule has no " + to_string(kind) + " stage");
}

namespace {

std::vector<size_t> epoch_order(size_t n, std::uint64_t seed, StageKind kind, int epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(kind), static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

LatentPatchGrid to_grid(const Tensor3& z) {
  LatentPatchGrid grid(z.height, z.width, z.channels);
  for (int r = 0; r < z.height; ++r)
    for (int c = 0; c < z.width; ++c) {
      auto p = grid.patch(r, c);
      for (int d = 0; d < z.channels; ++d) p[static_cast<size_t>(d)] = z.at(d, r, c);
    }
  return grid;
}

Tensor3 grid_to_tensor(const LatentPatchGrid& g) {
  Tensor3 t(g.dim, g.height, g.width);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) {
      auto p = g.patch(r, c);
      for (int d = 0; d < g.dim; ++d) t.at(d, r, c) = p[static_cast<size_t>(d)];
    }
  return t;
}

double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

void check_finite(double v, const char* component, StageKind kind, int epoch) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("non-finite loss component '") + component + "' in " + to_string(kind) +
                       " stage, epoch " + std::to_string(epoch + 1));
  }
}

// Trainable views of the prototype layer and evidence weights.
struct PrototypeParams {
  Param centers;
  Param radii;
  Param last_layer;

  explicit PrototypeParams(const ProtoConceptsNet& net)
      : centers(static_cast<size_t>(net.num_prototypes()) * net.latent_dim()),
        radii(static_cast<size_t>(net.num_prototypes())),
        last_layer(net.evidence.weights().size()) {
    const size_t d = static_cast<size_t>(net.latent_dim());
    for (size_t j = 0; j < net.balls.size(); ++j) {
      std::copy(net.balls[j].center.begin(), net.balls[j].center.end(), centers.value.begin() + static_cast<long>(j * d));
      radii.value[j] = net.balls[j].radius_param;
    }
    last_layer.value = net.evidence.weights();
  }

  void write_back(ProtoConceptsNet& net, const StageSpec& stage) const {
    const size_t d = static_cast<size_t>(net.latent_dim());
    for (size_t j = 0; j < net.balls.size(); ++j) {
      if (stage.trains(ParamGroup::Centers)) {
        std::copy(centers.value.begin() + static_cast<long>(j * d), centers.value.begin() + static_cast<long>((j + 1) * d),
                  net.balls[j].center.begin());
      }
      if (stage.trains(ParamGroup::Radii)) net.balls[j].radius_param = radii.value[j];
    }
    if (stage.trains(ParamGroup::LastLayer)) net.evidence.weights() = last_layer.value;
  }
};

void zero_all(std::vector<Param*> ps) {
  for (auto* p : ps) p->zero_grad();
}

struct ImageTerms {
  double ce = 0.0;
  double clstk = 0.0;
  double sep = 0.0;
  bool correct = false;
};

}  // namespace

TrainingLog run_stage(ProtoConceptsNet& net, const LabeledImages& data, const StageSpec& stage,
                      const OptimizerSpec& optimizer, std::uint64_t seed) {
  stage.validate();
  net.validate();
  if (stage.kind == StageKind::Finetune) {
    return finetune_last_layer(net, data, stage.l1, stage.epochs, stage.lr(ParamGroup::LastLayer), optimizer, seed);
  }
  TrainingLog log;
  if (stage.epochs == 0) return log;
  if (data.size() == 0) throw Error(to_string(stage.kind) + " stage: empty training set");

  const int m = net.num_prototypes();
  const int dim = net.latent_dim();
  const int num_classes = net.num_classes();
  const auto& assign = net.evidence.assignment();
  const auto& w = stage.weights;
  const bool train_backbone = stage.trains(ParamGroup::Backbone);
  const bool train_addon = stage.trains(ParamGroup::AddOn);
  const bool need_latent_grad = train_backbone || train_addon;

  zero_all(net.backbone->parameters());
  zero_all(net.addon.parameters());
  PrototypeParams proto(net);

  std::vector<AdamGroup> groups;
  auto add_group = [&](ParamGroup g, std::vector<Param*> ps, double decay) {
    if (stage.trains(g)) groups.emplace_back(std::move(ps), stage.lr(g), decay, optimizer.adam);
  };
  add_group(ParamGroup::Backbone, net.backbone->parameters(), optimizer.weight_decay);
  add_group(ParamGroup::AddOn, net.addon.parameters(), optimizer.weight_decay);
  add_group(ParamGroup::Centers, {&proto.centers}, 0.0);
  add_group(ParamGroup::Radii, {&proto.radii}, 0.0);
  add_group(ParamGroup::LastLayer, {&proto.last_layer}, 0.0);
  std::vector<double> base_rates;
  for (const auto& g : groups) base_rates.push_back(g.learning_rate());

  bool warned_k = false;
  for (int c = 0; c < num_classes; ++c) {
    const int pool = static_cast<int>(assign.prototypes_of(c).size());
    if (pool < w.k && !warned_k) {
      warn("class " + std::to_string(c) + " has " + std::to_string(pool) + " prototypes, fewer than k=" +
           std::to_string(w.k) + "; the cluster loss uses the whole pool");
      warned_k = true;
    }
  }

  // With a frozen backbone its features are fixed for the whole stage.
  std::vector<Tensor3> feature_cache;
  if (!train_backbone) feature_cache.resize(data.size());

  for (int epoch = 0; epoch < stage.epochs; ++epoch) {
    if (stage.kind == StageKind::Joint && optimizer.lr_step_epochs > 0) {
      const double factor = std::pow(optimizer.lr_gamma, epoch / optimizer.lr_step_epochs);
      for (size_t g = 0; g < groups.size(); ++g) groups[g].set_learning_rate(base_rates[g] * factor);
    }
    const auto order = epoch_order(data.size(), seed, stage.kind, epoch);
    EpochLog entry;
    entry.stage = stage.kind;
    entry.epoch = epoch + 1;
    int correct = 0;

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(optimizer.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(optimizer.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);

      for (size_t b = start; b < end; ++b) {
        const size_t idx = order[b];
        const int label = data.labels[idx];
        NetTrace trace;
        Tensor3 features;
        if (train_backbone) {
          features = net.backbone->forward(image_to_tensor(data.images[idx]), &trace.backbone);
        } else {
          if (feature_cache[idx].data.empty()) feature_cache[idx] = net.backbone->forward(image_to_tensor(data.images[idx]), nullptr);
          features = feature_cache[idx];
        }
        const Tensor3 z = net.addon.forward(features, &trace.addon);
        const LatentPatchGrid grid = to_grid(z);
        require_finite(grid.values, "latent grid");
        const auto acts = prototype_activations(net, grid);

        std::vector<double> sims(static_cast<size_t>(m));
        for (int j = 0; j < m; ++j) sims[static_cast<size_t>(j)] = acts[static_cast<size_t>(j)].similarity;
        const auto logits = net.evidence.logits(sims);
        ImageTerms terms;
        terms.ce = log_sum_exp(logits) - logits[static_cast<size_t>(label)];
        terms.correct = argmax_class(logits) == label;
        const auto probs = softmax(logits);

        LatentPatchGrid grad_z(grid.height, grid.width, dim);
        auto push = [&](int j, const BallGradient& g, double coef) {
          const auto& cell = acts[static_cast<size_t>(j)].nearest;
          auto gp = grad_z.patch(cell.row, cell.col);
          for (int d = 0; d < dim; ++d) {
            gp[static_cast<size_t>(d)] += coef * g.d_patch[static_cast<size_t>(d)];
            proto.centers.grad[static_cast<size_t>(j) * dim + d] += coef * g.d_center[static_cast<size_t>(d)];
          }
          proto.radii.grad[static_cast<size_t>(j)] += coef * g.d_radius_param;
        };

        // Cross-entropy through the evidence layer and the pass-through activation.
        std::vector<double> dlogit(static_cast<size_t>(num_classes));
        for (int c = 0; c < num_classes; ++c) {
          dlogit[static_cast<size_t>(c)] = w.ce * scale * (probs[static_cast<size_t>(c)] - (c == label ? 1.0 : 0.0));
        }
        for (int j = 0; j < m; ++j) {
          if (!net.evidence.active(j)) continue;
          double ds = 0.0;
          for (int c = 0; c < num_classes; ++c) {
            ds += dlogit[static_cast<size_t>(c)] * net.evidence.weight(j, c);
            proto.last_layer.grad[static_cast<size_t>(j) * num_classes + c] +=
                dlogit[static_cast<size_t>(c)] * sims[static_cast<size_t>(j)];
          }
          const auto& cell = acts[static_cast<size_t>(j)].nearest;
          push(j, similarity_gradient(grid.patch(cell.row, cell.col), net.balls[static_cast<size_t>(j)],
                                      net.geometry_config),
               ds);
        }

        // Top-k cluster loss over the image's class pool.
        const auto& pool = assign.prototypes_of(label);
        if (!pool.empty()) {
          std::vector<double> dists;
          dists.reserve(pool.size());
          for (int j : pool) {
            dists.push_back(std::max(acts[static_cast<size_t>(j)].min_distance,
                                     effective_radius(net.balls[static_cast<size_t>(j)], net.geometry_config)));
          }
          std::vector<size_t> rank(pool.size());
          std::iota(rank.begin(), rank.end(), size_t{0});
          std::stable_sort(rank.begin(), rank.end(), [&](size_t a, size_t b) { return dists[a] < dists[b]; });
          const size_t k = std::min(pool.size(), static_cast<size_t>(w.k));
          for (size_t t = 0; t < k; ++t) {
            const int j = pool[rank[t]];
            terms.clstk += dists[rank[t]];
            const auto& cell = acts[static_cast<size_t>(j)].nearest;
            push(j, distance_gradient(grid.patch(cell.row, cell.col), net.balls[static_cast<size_t>(j)], net.geometry_config),
                 w.clstk * scale);
          }
        }

        // Separation from the nearest wrong-class prototype.
        int nearest_wrong = -1;
        double wrong_dist = std::numeric_limits<double>::infinity();
        for (int j = 0; j < m; ++j) {
          if (assign.assigned(j, label)) continue;
          const double d = std::max(acts[static_cast<size_t>(j)].min_distance,
                                    effective_radius(net.balls[static_cast<size_t>(j)], net.geometry_config));
          if (d < wrong_dist) {
            wrong_dist = d;
            nearest_wrong = j;
          }
        }
        if (nearest_wrong >= 0) {
          terms.sep = wrong_dist;
          const auto& cell = acts[static_cast<size_t>(nearest_wrong)].nearest;
          push(nearest_wrong,
               distance_gradient(grid.patch(cell.row, cell.col), net.balls[static_cast<size_t>(nearest_wrong)],
                                 net.geometry_config),
               w.sep * scale);
        }

        check_finite(terms.ce, "ce", stage.kind, epoch);
        check_finite(terms.clstk, "clstk", stage.kind, epoch);
        check_finite(terms.sep, "sep", stage.kind, epoch);
        entry.ce += terms.ce;
        entry.clstk += terms.clstk;
        entry.sep += terms.sep;
        correct += terms.correct ? 1 : 0;

        if (need_latent_grad) {
          const Tensor3 gfeat = net.addon.backward(trace.addon, grid_to_tensor(grad_z), train_backbone);
          if (train_backbone) net.backbone->backward(trace.backbone, gfeat);
        }
      }

      for (int j = 0; j < m; ++j) {
        proto.radii.grad[static_cast<size_t>(j)] += w.rad * radius_loss_gradient(net.balls[static_cast<size_t>(j)], net.geometry_config);
      }
      for (auto& g : groups) g.step();
      zero_all(net.backbone->parameters());
      zero_all(net.addon.parameters());
      zero_all({&proto.centers, &proto.radii, &proto.last_layer});
      proto.write_back(net, stage);
    }

    const double n = static_cast<double>(data.size());
    entry.ce /= n;
    entry.clstk /= n;
    entry.sep /= n;
    entry.rad = radius_loss(net.balls, net.geometry_config);
    check_finite(entry.rad, "rad", stage.kind, epoch);
    entry.total = composite_objective(entry.ce, entry.clstk, entry.sep, entry.rad, w);
    entry.accuracy = correct / n;
    log.push_back(entry);
  }
  return log;
}

TrainingLog finetune_last_layer(ProtoConceptsNet& net, const LabeledImages& data, double l1_weight, int epochs,
                                double learning_rate, const OptimizerSpec& optimizer, std::uint64_t seed) {
  TrainingLog log;
  if (epochs <= 0) return log;
  if (data.size() == 0) throw Error("finetune stage: empty training set");
  const int m = net.num_prototypes();
  const int num_classes = net.num_classes();
  const auto& assign = net.evidence.assignment();

  auto zero_masked_rows = [&](std::vector<double>& wv) {
    for (int j = 0; j < m; ++j)
      if (!net.evidence.active(j))
        for (int c = 0; c < num_classes; ++c) wv[static_cast<size_t>(j) * num_classes + c] = 0.0;
  };

  // Everything upstream of the evidence layer is frozen, so similarities are fixed.
  std::vector<std::vector<double>> sims;
  sims.reserve(data.size());
  for (const auto& img : data.images) {
    const auto acts = prototype_activations(net, latent_grid(net, img));
    std::vector<double> s;
    s.reserve(acts.size());
    for (const auto& a : acts) s.push_back(a.similarity);
    sims.push_back(std::move(s));
  }

  Param weights(net.evidence.weights().size());
  weights.value = net.evidence.weights();
  zero_masked_rows(weights.value);
  net.evidence.weights() = weights.value;
  AdamGroup group({&weights}, learning_rate, 0.0, optimizer.adam);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto order = epoch_order(data.size(), seed, StageKind::Finetune, epoch);
    EpochLog entry;
    entry.stage = StageKind::Finetune;
    entry.epoch = epoch + 1;
    int correct = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(optimizer.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(optimizer.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      for (size_t b = start; b < end; ++b) {
        const size_t idx = order[b];
        const int label = data.labels[idx];
        const auto logits = net.evidence.logits(sims[idx]);
        const double ce = log_sum_exp(logits) - logits[static_cast<size_t>(label)];
        check_finite(ce, "ce", StageKind::Finetune, epoch);
        entry.ce += ce;
        correct += argmax_class(logits) == label ? 1 : 0;
        const auto probs = softmax(logits);
        for (int j = 0; j < m; ++j) {
          if (!net.evidence.active(j)) continue;
          for (int c = 0; c < num_classes; ++c) {
            const double dl = scale * (probs[static_cast<size_t>(c)] - (c == label ? 1.0 : 0.0));
            weights.grad[static_cast<size_t>(j) * num_classes + c] += dl * sims[idx][static_cast<size_t>(j)];
          }
        }
      }
      for (int j = 0; j < m; ++j) {
        if (!net.evidence.active(j)) continue;
        for (int c = 0; c < num_classes; ++c) {
          if (assign.assigned(j, c)) continue;
          const size_t at = static_cast<size_t>(j) * num_classes + c;
          const double v = weights.value[at];
          weights.grad[at] += l1_weight * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
        }
      }
      group.step();
      zero_masked_rows(weights.value);
      net.evidence.weights() = weights.value;
    }
    double l1 = 0.0;
    for (int j = 0; j < m; ++j)
      for (int c = 0; c < num_classes; ++c)
        if (!assign.assigned(j, c)) l1 += std::abs(net.evidence.weight(j, c));
    const double n = static_cast<double>(data.size());
    entry.ce /= n;
    entry.l1 = l1;
    entry.total = entry.ce + l1_weight * l1;
    entry.accuracy = correct / n;
    log.push_back(entry);
  }
  return log;
}

std::vector<long long> count_members(const ProtoConceptsNet& net, std::span<const LatentPatchGrid> grids) {
  std::vector<long long> counts(net.balls.size(), 0);
  for (const auto& g : grids)
    for (size_t j = 0; j < net.balls.size(); ++j)
      for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c)
          if (is_member(g.patch(r, c), net.balls[j], net.geometry_config)) ++counts[j];
  return counts;
}

std::vector<long long> count_members(const ProtoConceptsNet& net, const LabeledImages& data) {
  std::vector<long long> counts(net.balls.size(), 0);
  for (size_t i = 0; i < data.size(); ++i) {
    const auto grid = latent_grid(net, data.images[i]);
    const auto c = count_members(net, std::span<const LatentPatchGrid>(&grid, 1));
    for (size_t j = 0; j < counts.size(); ++j) counts[j] += c[j];
  }
  return counts;
}

namespace {
PruneResult apply_prune(ProtoConceptsNet& net, std::vector<long long> counts) {
  PruneResult out;
  out.mask = net.evidence.prune_mask();
  for (size_t j = 0; j < counts.size(); ++j)
    if (counts[j] == 0) out.mask[j] = 0;
  out.member_counts = std::move(counts);
  out.surviving = static_cast<int>(std::count(out.mask.begin(), out.mask.end(), 1));
  if (out.surviving == 0) warn("pruning removed every prototype; the model cannot classify");
  net.evidence.set_prune_mask(out.mask);
  return out;
}
}  // namespace

PruneResult prune_empty_balls(ProtoConceptsNet& net, std::span<const LatentPatchGrid> training_grids) {
  if (training_grids.empty()) throw Error("prune_empty_balls: empty training set");
  return apply_prune(net, count_members(net, training_grids));
}

PruneResult prune_empty_balls(ProtoConceptsNet& net, const LabeledImages& training_data) {
  if (training_data.size() == 0) throw Error("prune_empty_balls: empty training set");
  return apply_prune(net, count_members(net, training_data));
}

EvalReport evaluate(const ProtoConceptsNet& net, const LabeledImages& data) {
  EvalReport rep;
  const int num_classes = net.num_classes();
  rep.per_class_accuracy.assign(static_cast<size_t>(num_classes), 0.0);
  rep.per_class_count.assign(static_cast<size_t>(num_classes), 0);
  int correct = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    const auto acts = prototype_activations(net, latent_grid(net, data.images[i]));
    std::vector<double> s;
    for (const auto& a : acts) s.push_back(a.similarity);
    auto logits = net.evidence.logits(s);
    const int pred = argmax_class(logits);
    const int label = data.labels[i];
    rep.predictions.push_back(pred);
    rep.logits.push_back(std::move(logits));
    rep.per_class_count[static_cast<size_t>(label)]++;
    if (pred == label) {
      ++correct;
      rep.per_class_accuracy[static_cast<size_t>(label)] += 1.0;
    }
  }
  for (int c = 0; c < num_classes; ++c) {
    if (rep.per_class_count[static_cast<size_t>(c)] > 0)
      rep.per_class_accuracy[static_cast<size_t>(c)] /= rep.per_class_count[static_cast<size_t>(c)];
  }
  rep.accuracy = data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
  return rep;
}

namespace {

fs::path resolve(const Config& cfg, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  if (path.is_absolute() || cfg.base_dir().empty()) return path;
  return cfg.base_dir() / path;
}

std::vector<int> read_assignment_file(const fs::path& path, int& rows, int num_classes) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read assignment file '" + path.string() + "'");
  std::vector<int> out;
  std::string line;
  rows = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream is(line);
    int v = 0, cols = 0;
    while (is >> v) {
      out.push_back(v);
      ++cols;
    }
    if (num_classes > 0 && cols != num_classes) {
      throw ConfigError("assignment file row " + std::to_string(rows + 1) + " has " + std::to_string(cols) +
                        " entries, expected " + std::to_string(num_classes));
    }
    ++rows;
  }
  return out;
}

StageSpec stage_from_config(const Config& cfg, StageKind kind) {
  const std::string sec = "schedule." + to_string(kind) + ".";
  StageSpec s;
  s.kind = kind;
  s.epochs = static_cast<int>(cfg.get_int(sec + "epochs"));
  s.learning_rates = {cfg.get_real(sec + "lr_backbone"), cfg.get_real(sec + "lr_addon"), cfg.get_real(sec + "lr_centers"),
                      cfg.get_real(sec + "lr_radii"), cfg.get_real(sec + "lr_last_layer")};
  s.weights.ce = cfg.get_real("losses.w_ce");
  s.weights.clstk = cfg.get_real("losses.w_clstk");
  s.weights.sep = cfg.get_real("losses.w_sep");
  s.weights.rad = cfg.get_real("losses.w_rad");
  s.weights.k = static_cast<int>(cfg.get_int("losses.k"));
  s.l1 = cfg.get_real("losses.l1");
  return s;
}

}  // namespace

PipelineConfig make_pipeline_config(const Config& cfg) {
  PipelineConfig pc;
  auto& m = pc.model;
  m.backbone = cfg.get_string("model.backbone");
  m.image_size = static_cast<int>(cfg.get_int("model.image_size"));
  m.latent_dim = static_cast<int>(cfg.get_int("model.latent_dim"));
  m.prototypes_per_class = static_cast<int>(cfg.get_int("model.prototypes_per_class"));
  m.num_classes = static_cast<int>(cfg.get_int("model.num_classes"));
  m.geometry = geometry_from_string(cfg.get_string("geometry.kind"));
  m.geometry_config.epsilon = cfg.get_real("geometry.epsilon");
  m.geometry_config.min_radius = cfg.get_real("geometry.min_radius");
  m.geometry_config.validate();
  m.radius_init = cfg.get_real("geometry.radius_init");
  m.seed = static_cast<std::uint64_t>(cfg.get_int("schedule.seed"));
  if (m.image_size < 1) throw ConfigError("model.image_size must be positive");
  if (m.prototypes_per_class < 1) throw ConfigError("model.prototypes_per_class must be >= 1");
  if (m.num_classes < 0) throw ConfigError("model.num_classes must be >= 0");
  const auto mode = cfg.get_string("model.assignment");
  if (mode == "shared") {
    const auto file = resolve(cfg, cfg.get_string("model.assignment_file"));
    if (file.empty()) throw ConfigError("model.assignment = shared requires model.assignment_file");
    m.shared_assignment = read_assignment_file(file, m.shared_prototypes, m.num_classes);
  } else if (mode != "class-specific") {
    throw ConfigError("model.assignment must be class-specific or shared");
  }

  pc.radius_presets = {cfg.get_real("geometry.radius_small"), cfg.get_real("geometry.radius_medium"),
                       cfg.get_real("geometry.radius_large")};

  auto& sch = pc.schedule;
  sch.seed = m.seed;
  if (cfg.get_string("schedule.optimizer") != "adam") throw ConfigError("schedule.optimizer must be adam");
  sch.optimizer.adam = {cfg.get_real("schedule.beta1"), cfg.get_real("schedule.beta2"), cfg.get_real("schedule.adam_eps")};
  sch.optimizer.weight_decay = cfg.get_real("schedule.weight_decay");
  sch.optimizer.batch_size = static_cast<int>(cfg.get_int("schedule.batch_size"));
  sch.optimizer.lr_step_epochs = static_cast<int>(cfg.get_int("schedule.lr_step_epochs"));
  sch.optimizer.lr_gamma = cfg.get_real("schedule.lr_gamma");
  sch.stages = {stage_from_config(cfg, StageKind::Warmup), stage_from_config(cfg, StageKind::Joint),
                stage_from_config(cfg, StageKind::Finetune)};
  sch.validate();

  for (const char* key : {"w_subspace_sep", "w_orthogonality"}) {
    if (cfg.get_real(std::string("losses.") + key) != 0.0 && !AuxiliaryLossRegistry::instance().find(key)) {
      warn(std::string("losses.") + key + " is set but no auxiliary loss of that name is registered; it is ignored");
    }
  }

  auto& d = pc.data;
  d.root = resolve(cfg, cfg.get_string("data.root"));
  d.synthetic = cfg.get_bool("data.synthetic");
  d.synthetic_spec.num_classes = static_cast<int>(cfg.get_int("data.synthetic_classes"));
  d.synthetic_spec.image_size = m.image_size;
  d.synthetic_spec.train_per_class = static_cast<int>(cfg.get_int("data.synthetic_train_per_class"));
  d.synthetic_spec.test_per_class = static_cast<int>(cfg.get_int("data.synthetic_test_per_class"));
  d.synthetic_spec.noise = cfg.get_real("data.synthetic_noise");
  d.synthetic_spec.seed = static_cast<std::uint64_t>(cfg.get_int("data.synthetic_seed"));
  if (d.synthetic) d.synthetic_spec.validate();
  if (const auto ct = cfg.get_string("data.crop_table"); !ct.empty()) d.crop_table = resolve(cfg, ct);
  d.augment.copies = static_cast<int>(cfg.get_int("data.augment_copies"));
  d.augment.rotation = cfg.get_real("data.augment_rotation");
  d.augment.shear = cfg.get_real("data.augment_shear");
  d.augment.skew = cfg.get_real("data.augment_skew");
  d.augment.flip = cfg.get_bool("data.augment_flip");
  d.augment.seed = m.seed;
  d.augment.validate();
  const auto aug_root = cfg.get_string("data.augment_root");
  d.augment_root = aug_root.empty() ? fs::path(d.root.string() + "-augmented") : resolve(cfg, aug_root);

  pc.prune = cfg.get_bool("prune.enabled");
  pc.top_n = static_cast<int>(cfg.get_int("explain.top_n"));
  pc.top_p = static_cast<int>(cfg.get_int("explain.top_p"));
  if (pc.top_n < 1 || pc.top_p < 1) throw ConfigError("explain.top_n and explain.top_p must be >= 1");
  return pc;
}

namespace {
std::string synthetic_stamp(const SyntheticConceptSpec& s) {
  Sidecar sc;
  sc.add("classes", s.num_classes);
  sc.add("image_size", s.image_size);
  sc.add("train_per_class", s.train_per_class);
  sc.add("test_per_class", s.test_per_class);
  sc.add("noise", s.noise);
  sc.add("seed", static_cast<long long>(s.seed));
  return sc.text();
}
}  // namespace

DatasetManifest prepare_dataset(const DataConfig& data, int image_size) {
  DatasetManifest manifest;
  if (data.synthetic) {
    const fs::path stamp = data.root / "synthetic.txt";
    const std::string expected = synthetic_stamp(data.synthetic_spec);
    std::string found;
    if (std::ifstream in(stamp); in) {
      std::stringstream ss;
      ss << in.rdbuf();
      found = ss.str();
    }
    if (found != expected) {
      if (fs::exists(data.root)) {
        for (const char* sub : {"train", "test", "masks"}) fs::remove_all(data.root / sub);
      }
      generate_synthetic(data.synthetic_spec, data.root);
      std::ofstream(stamp) << expected;
    }
    manifest = load_directory_dataset(data.root, image_size);
  } else {
    manifest = load_directory_dataset(data.root, image_size, data.crop_table);
  }
  if (data.augment.copies > 0) manifest = augment_offline(manifest, data.augment, data.augment_root);
  return manifest;
}

void bind_classes(ModelSpec& model, const DatasetManifest& manifest) {
  if (model.num_classes == 0) {
    model.num_classes = manifest.num_classes();
  } else if (model.num_classes != manifest.num_classes()) {
    throw ConfigError("model.num_classes = " + std::to_string(model.num_classes) + " but the dataset has " +
                      std::to_string(manifest.num_classes()) + " classes");
  }
  if (!model.shared_assignment.empty() &&
      model.shared_assignment.size() != static_cast<size_t>(model.shared_prototypes) * model.num_classes) {
    throw ConfigError("assignment file does not match the number of classes");
  }
}

Sidecar training_log_sidecar(const TrainingLog& log) {
  Sidecar sc;
  for (const auto& e : log) {
    const std::string p = "epoch." + to_string(e.stage) + "." + std::to_string(e.epoch) + ".";
    sc.add(p + "total", e.total);
    sc.add(p + "ce", e.ce);
    sc.add(p + "clstk", e.clstk);
    sc.add(p + "sep", e.sep);
    sc.add(p + "rad", e.rad);
    sc.add(p + "l1", e.l1);
    sc.add(p + "train_accuracy", e.accuracy);
  }
  return sc;
}

PipelineResult run_pipeline(const PipelineConfig& config, const fs::path& out_dir, const PipelineOptions& options) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  config.schedule.validate();
  PipelineConfig cfg = config;
  const DatasetManifest manifest = prepare_dataset(cfg.data, cfg.model.image_size);
  bind_classes(cfg.model, manifest);
  const LabeledImages train = load_split(manifest, Split::Train);
  const LabeledImages test = load_split(manifest, Split::Test);
  if (train.size() == 0) throw Error("training split is empty");

  const fs::path ckpt_dir = out_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  auto meta = [&](const std::string& stage, bool pruned) {
    return CheckpointMetadata{{"stage", stage},
                              {"pruned", pruned ? "1" : "0"},
                              {"seed", std::to_string(cfg.schedule.seed)},
                              {"classes", std::to_string(cfg.model.num_classes)}};
  };

  PipelineResult result;
  const auto& sched = cfg.schedule;
  const fs::path joint_ckpt = ckpt_dir / "joint.ckpt";
  if (options.resume && fs::exists(joint_ckpt)) {
    result.net = load_checkpoint(joint_ckpt).net;
  } else {
    result.net = build_net(cfg.model);
    for (StageKind kind : {StageKind::Warmup, StageKind::Joint}) {
      const auto stage_log = run_stage(result.net, train, sched.stage(kind), sched.optimizer, sched.seed);
      result.log.insert(result.log.end(), stage_log.begin(), stage_log.end());
      save_checkpoint(result.net, meta(to_string(kind), false), ckpt_dir / (to_string(kind) + ".ckpt"));
    }
  }
  result.accuracy_before_prune = test.size() ? evaluate(result.net, test).accuracy : 0.0;

  auto& sc = result.metrics;
  sc.add("accuracy_before_prune", result.accuracy_before_prune);
  sc.add("prototypes_total", result.net.num_prototypes());
  if (!options.stop_after_joint) {
    if (cfg.prune) {
      result.prune = prune_empty_balls(result.net, train);
    } else {
      result.prune.mask = result.net.evidence.prune_mask();
      result.prune.member_counts = count_members(result.net, train);
      result.prune.surviving = static_cast<int>(std::count(result.prune.mask.begin(), result.prune.mask.end(), 1));
    }
    save_checkpoint(result.net, meta("pruned", cfg.prune), ckpt_dir / "pruned.ckpt");
    const auto& ft = sched.stage(StageKind::Finetune);
    const auto ft_log = run_stage(result.net, train, ft, sched.optimizer, sched.seed);
    result.log.insert(result.log.end(), ft_log.begin(), ft_log.end());
    save_checkpoint(result.net, meta("finetune", cfg.prune), ckpt_dir / "final.ckpt");
    result.accuracy_after_finetune = test.size() ? evaluate(result.net, test).accuracy : 0.0;
    sc.add("accuracy_after_finetune", result.accuracy_after_finetune);
    sc.add("prototypes_surviving", result.prune.surviving);
    long long members = 0;
    for (auto c : result.prune.member_counts) members += c;
    sc.add("member_patches_total", members);
  }
  sc.append(training_log_sidecar(result.log));
  sc.write(out_dir / "metrics.txt");
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::cout << "pipeline finished in " << secs << " s\n";
  return result;
}

}  // namespace protoconcepts
