#include "protoconcepts/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "protoconcepts/diagnostics.hpp"

namespace protoconcepts {

namespace {

// Keeps d acos / d s finite at s = +-1.
constexpr double kCosineGuard = 1e-12;

void check_dims(std::span<const double> patch, const PrototypeBall& ball) {
  if (patch.size() != ball.center.size()) {
    throw Error("latent dimension mismatch: patch has " + std::to_string(patch.size()) + ", prototype has " +
                std::to_string(ball.center.size()));
  }
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct CosineTerms {
  double cos_sim;
  double patch_norm;
  double center_norm;
};

CosineTerms cosine_terms(std::span<const double> patch, const PrototypeBall& ball) {
  check_dims(patch, ball);
  require_finite(patch, "latent patch");
  require_finite(ball.center, "prototype center");
  const double pn = norm(patch);
  const double cn = norm(ball.center);
  if (pn == 0.0) throw Error("degenerate vector: zero-norm latent patch in cosine similarity");
  if (cn == 0.0) throw Error("degenerate vector: zero-norm prototype center in cosine similarity");
  double dot = 0.0;
  for (size_t i = 0; i < patch.size(); ++i) dot += patch[i] * ball.center[i];
  const double s = std::clamp(dot / (pn * cn), -1.0, 1.0);
  return {s, pn, cn};
}

double angle_of(double cos_sim) { return std::acos(cos_sim); }

double checked_squared_distance(std::span<const double> patch, const PrototypeBall& ball) {
  check_dims(patch, ball);
  require_finite(patch, "latent patch");
  require_finite(ball.center, "prototype center");
  return squared_distance(patch, ball.center);
}

// d cos_sim / d patch and d cos_sim / d center.
void cosine_partials(std::span<const double> patch, const PrototypeBall& ball, const CosineTerms& t,
                     std::vector<double>& d_patch, std::vector<double>& d_center) {
  const size_t n = patch.size();
  d_patch.resize(n);
  d_center.resize(n);
  const double inv = 1.0 / (t.patch_norm * t.center_norm);
  const double pp = t.cos_sim / (t.patch_norm * t.patch_norm);
  const double cc = t.cos_sim / (t.center_norm * t.center_norm);
  for (size_t i = 0; i < n; ++i) {
    d_patch[i] = ball.center[i] * inv - pp * patch[i];
    d_center[i] = patch[i] * inv - cc * ball.center[i];
  }
}

double acos_slope(double s) {
  const double guarded = std::clamp(s, -1.0 + kCosineGuard, 1.0 - kCosineGuard);
  return -1.0 / std::sqrt(1.0 - guarded * guarded);
}

}  // namespace

std::string to_string(Geometry g) { return g == Geometry::Log ? "log" : "cosine"; }

Geometry geometry_from_string(const std::string& name) {
  if (name == "log") return Geometry::Log;
  if (name == "cosine") return Geometry::Cosine;
  throw ConfigError("unknown geometry '" + name + "' (expected log or cosine)");
}

void GeometryConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("geometry.epsilon must lie in (0, 1)");
  if (!(min_radius > 0.0)) throw ConfigError("geometry.min_radius must be positive");
}

LatentPatchGrid::LatentPatchGrid(int h, int w, int d, std::string id)
    : source_image_id(std::move(id)), height(h), width(w), dim(d), values(static_cast<size_t>(h) * w * d, 0.0) {}

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what + " (corrupt latent)");
  }
}

double effective_radius(const PrototypeBall& ball, const GeometryConfig& cfg) {
  if (ball.geometry == Geometry::Log) return std::max(ball.radius_param, cfg.min_radius);
  return std::clamp(ball.radius_param, cfg.min_radius, std::numbers::pi);
}

double effective_radius_slope(const PrototypeBall& ball, const GeometryConfig& cfg) {
  if (ball.radius_param <= cfg.min_radius) return 0.0;
  if (ball.geometry == Geometry::Cosine && ball.radius_param >= std::numbers::pi) return 0.0;
  return 1.0;
}

double log_activation(double squared_distance, double epsilon) {
  return std::log((squared_distance + 1.0) / (squared_distance + epsilon));
}

double log_activation_slope(double squared_distance, double epsilon) {
  return 1.0 / (squared_distance + 1.0) - 1.0 / (squared_distance + epsilon);
}

double clamp_value(const PrototypeBall& ball, const GeometryConfig& cfg) {
  const double r = effective_radius(ball, cfg);
  return ball.geometry == Geometry::Log ? log_activation(r, cfg.epsilon) : std::cos(r);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double log_ball_similarity(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg) {
  if (ball.geometry != Geometry::Log) throw Error("log_ball_similarity called on a cosine prototype");
  const double d2 = checked_squared_distance(patch, ball);
  const double r = effective_radius(ball, cfg);
  const double plateau = log_activation(r, cfg.epsilon);
  // Members take the plateau value through one arithmetic path.
  if (d2 <= r) return plateau;
  return std::min(log_activation(d2, cfg.epsilon), plateau);
}

double cos_ball_similarity(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg) {
  if (ball.geometry != Geometry::Cosine) throw Error("cos_ball_similarity called on a log prototype");
  const auto t = cosine_terms(patch, ball);
  const double r = effective_radius(ball, cfg);
  const double plateau = std::cos(r);
  if (angle_of(t.cos_sim) <= r) return plateau;
  return std::min(t.cos_sim, plateau);
}

double ball_similarity(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg) {
  return ball.geometry == Geometry::Log ? log_ball_similarity(patch, ball, cfg) : cos_ball_similarity(patch, ball, cfg);
}

double unclamped_similarity(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg) {
  if (ball.geometry == Geometry::Log) return log_activation(checked_squared_distance(patch, ball), cfg.epsilon);
  return cosine_terms(patch, ball).cos_sim;
}

double center_distance(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig&) {
  if (ball.geometry == Geometry::Log) return checked_squared_distance(patch, ball);
  return angle_of(cosine_terms(patch, ball).cos_sim);
}

double ball_distance(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg) {
  return std::max(center_distance(patch, ball, cfg), effective_radius(ball, cfg));
}

bool is_member(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg) {
  return center_distance(patch, ball, cfg) <= effective_radius(ball, cfg);
}

SimilarityMap similarity_map(const LatentPatchGrid& grid, const PrototypeBall& ball, const GeometryConfig& cfg,
                             int prototype_id) {
  if (grid.dim != ball.dim()) {
    throw Error("similarity_map: grid dimension " + std::to_string(grid.dim) + " != prototype dimension " +
                std::to_string(ball.dim()));
  }
  SimilarityMap map{prototype_id, grid.height, grid.width, {}};
  map.values.reserve(static_cast<size_t>(grid.cells()));
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c) map.values.push_back(ball_similarity(grid.patch(r, c), ball, cfg));
  return map;
}

SimilarityMap unclamped_similarity_map(const LatentPatchGrid& grid, const PrototypeBall& ball,
                                       const GeometryConfig& cfg, int prototype_id) {
  if (grid.dim != ball.dim()) throw Error("unclamped_similarity_map: dimension mismatch");
  SimilarityMap map{prototype_id, grid.height, grid.width, {}};
  map.values.reserve(static_cast<size_t>(grid.cells()));
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c) map.values.push_back(unclamped_similarity(grid.patch(r, c), ball, cfg));
  return map;
}

PooledSimilarity max_pool_similarity(const SimilarityMap& map) {
  if (map.values.empty() || map.width <= 0) throw Error("max_pool_similarity: empty similarity map");
  size_t best = 0;
  for (size_t i = 1; i < map.values.size(); ++i) {
    if (map.values[i] > map.values[best]) best = i;
  }
  return {map.values[best], {static_cast<int>(best) / map.width, static_cast<int>(best) % map.width}};
}

BallGradient similarity_gradient(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg) {
  BallGradient g;
  const double r = effective_radius(ball, cfg);
  const double slope_r = effective_radius_slope(ball, cfg);
  if (ball.geometry == Geometry::Log) {
    const double d2 = checked_squared_distance(patch, ball);
    const double a = log_activation(d2, cfg.epsilon);
    const double b = log_activation(r, cfg.epsilon);
    g.value = d2 <= r ? b : std::min(a, b);
    const double da = log_activation_slope(d2, cfg.epsilon);
    g.d_patch.resize(patch.size());
    g.d_center.resize(patch.size());
    for (size_t i = 0; i < patch.size(); ++i) {
      const double diff = 2.0 * (patch[i] - ball.center[i]);
      g.d_patch[i] = da * diff;
      g.d_center[i] = -da * diff;
    }
    if (b < a) g.d_radius_param = log_activation_slope(r, cfg.epsilon) * slope_r;
    return g;
  }
  const auto t = cosine_terms(patch, ball);
  const double b = std::cos(r);
  g.value = angle_of(t.cos_sim) <= r ? b : std::min(t.cos_sim, b);
  cosine_partials(patch, ball, t, g.d_patch, g.d_center);
  if (b < t.cos_sim) g.d_radius_param = -std::sin(r) * slope_r;
  return g;
}

BallGradient distance_gradient(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg) {
  BallGradient g;
  const double r = effective_radius(ball, cfg);
  const double slope_r = effective_radius_slope(ball, cfg);
  if (ball.geometry == Geometry::Log) {
    const double d2 = checked_squared_distance(patch, ball);
    g.value = std::max(d2, r);
    g.d_patch.resize(patch.size());
    g.d_center.resize(patch.size());
    for (size_t i = 0; i < patch.size(); ++i) {
      const double diff = 2.0 * (patch[i] - ball.center[i]);
      g.d_patch[i] = diff;
      g.d_center[i] = -diff;
    }
    if (r > d2) g.d_radius_param = slope_r;
    return g;
  }
  const auto t = cosine_terms(patch, ball);
  const double angle = angle_of(t.cos_sim);
  g.value = std::max(angle, r);
  cosine_partials(patch, ball, t, g.d_patch, g.d_center);
  const double ds = acos_slope(t.cos_sim);
  for (auto& v : g.d_patch) v *= ds;
  for (auto& v : g.d_center) v *= ds;
  if (r > angle) g.d_radius_param = slope_r;
  return g;
}

BallGradient unclamped_similarity_gradient(std::span<const double> patch, const PrototypeBall& ball,
                                           const GeometryConfig& cfg) {
  BallGradient g;
  if (ball.geometry == Geometry::Log) {
    const double d2 = checked_squared_distance(patch, ball);
    g.value = log_activation(d2, cfg.epsilon);
    const double da = log_activation_slope(d2, cfg.epsilon);
    g.d_patch.resize(patch.size());
    g.d_center.resize(patch.size());
    for (size_t i = 0; i < patch.size(); ++i) {
      const double diff = 2.0 * (patch[i] - ball.center[i]);
      g.d_patch[i] = da * diff;
      g.d_center[i] = -da * diff;
    }
    return g;
  }
  const auto t = cosine_terms(patch, ball);
  g.value = t.cos_sim;
  cosine_partials(patch, ball, t, g.d_patch, g.d_center);
  return g;
}

}  // namespace protoconcepts
