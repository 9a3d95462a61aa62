#pragma once

// Ball prototypes in latent space and their clamped similarity functions.
//
// A prototype is a ball B(center, r). LOG geometry compares squared L2
// distances against r (r lives on the squared-distance scale); COSINE
// geometry compares angles against r (radians, clamped to (0, pi]).
// Every patch inside a ball scores the same clamped similarity.

#include <span>
#include <string>
#include <vector>

namespace protoconcepts {

enum class Geometry { Log, Cosine };

std::string to_string(Geometry g);
Geometry geometry_from_string(const std::string& name);

struct GeometryConfig {
  double epsilon = 1e-4;
  double min_radius = 1e-6;

  void validate() const;
};

struct PrototypeBall {
  std::vector<double> center;
  double radius_param = 0.0;
  Geometry geometry = Geometry::Log;

  int dim() const { return static_cast<int>(center.size()); }
};

struct GridCoord {
  int row = 0;
  int col = 0;
  bool operator==(const GridCoord&) const = default;
};

/// H x W grid of D-dimensional latent patch vectors, row-major, patch-contiguous.
struct LatentPatchGrid {
  std::string source_image_id;
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<double> values;

  LatentPatchGrid() = default;
  LatentPatchGrid(int h, int w, int d, std::string id = {});

  std::span<double> patch(int row, int col) {
    return {values.data() + (static_cast<size_t>(row) * width + col) * dim, static_cast<size_t>(dim)};
  }
  std::span<const double> patch(int row, int col) const {
    return {values.data() + (static_cast<size_t>(row) * width + col) * dim, static_cast<size_t>(dim)};
  }
  int cells() const { return height * width; }
};

struct SimilarityMap {
  int prototype_id = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int row, int col) const { return values[static_cast<size_t>(row) * width + col]; }
};

struct PooledSimilarity {
  double value = 0.0;
  GridCoord at;
};

/// LOG: max(radius_param, min_radius). COSINE: clamp(radius_param, min_radius, pi).
double effective_radius(const PrototypeBall& ball, const GeometryConfig& cfg);
/// d effective_radius / d radius_param: 1 inside the unclamped range, 0 on a floor/ceiling.
double effective_radius_slope(const PrototypeBall& ball, const GeometryConfig& cfg);

/// log((x + 1) / (x + eps)), the ProtoPNet activation of a squared distance.
double log_activation(double squared_distance, double epsilon);
double log_activation_slope(double squared_distance, double epsilon);

/// Similarity every member patch receives: log((r+1)/(r+eps)) or cos(r).
double clamp_value(const PrototypeBall& ball, const GeometryConfig& cfg);

double squared_distance(std::span<const double> a, std::span<const double> b);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

double log_ball_similarity(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg);
double cos_ball_similarity(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg);
/// Dispatches on ball.geometry.
double ball_similarity(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg);

/// Baseline activation without the radius clamp (ProtoPNet log / TesNet cosine).
double unclamped_similarity(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg);
/// Distance to the center: squared L2 (LOG) or angle (COSINE).
double center_distance(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg);

/// max(center_distance, r_eff); inside the ball the distance is the radius.
double ball_distance(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg);
/// center_distance <= r_eff, boundary inclusive.
bool is_member(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg);

SimilarityMap similarity_map(const LatentPatchGrid& grid, const PrototypeBall& ball, const GeometryConfig& cfg,
                             int prototype_id = 0);
/// Map of the unclamped baseline activation; used for localization.
SimilarityMap unclamped_similarity_map(const LatentPatchGrid& grid, const PrototypeBall& ball,
                                       const GeometryConfig& cfg, int prototype_id = 0);
/// Max and its row-major-first argmax.
PooledSimilarity max_pool_similarity(const SimilarityMap& map);

// Gradients under the pass-through estimator. For f = min(a, b) (similarity)
// or f = max(a, b) (distance) with a the center-distance branch and b the
// radius branch: patch/center receive the gradient of a everywhere, and the
// radius receives the gradient of b only where the clamp is active.
struct BallGradient {
  double value = 0.0;
  std::vector<double> d_patch;
  std::vector<double> d_center;
  double d_radius_param = 0.0;
};

BallGradient similarity_gradient(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg);
BallGradient distance_gradient(std::span<const double> patch, const PrototypeBall& ball, const GeometryConfig& cfg);
/// Exact gradient of the unclamped baseline activation (radius gets none).
BallGradient unclamped_similarity_gradient(std::span<const double> patch, const PrototypeBall& ball,
                                           const GeometryConfig& cfg);

void require_finite(std::span<const double> values, const char* what);

}  // namespace protoconcepts
