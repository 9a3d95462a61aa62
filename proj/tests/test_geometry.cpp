#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "protoconcepts/diagnostics.hpp"
#include "protoconcepts/geometry.hpp"

using namespace protoconcepts;

namespace {

GeometryConfig cfg() { return {}; }

PrototypeBall ball(std::vector<double> c, double r, Geometry g = Geometry::Log) { return {std::move(c), r, g}; }

// Direct evaluation of the clamped log activation, independent of the library.
double oracle_log(double d2, double r, double eps = 1e-4) {
  return std::min(std::log((d2 + 1.0) / (d2 + eps)), std::log((r + 1.0) / (r + eps)));
}

std::vector<double> random_vec(std::mt19937_64& rng, int d, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<size_t>(d));
  for (auto& x : v) x = u(rng);
  return v;
}

// Point at squared distance d2 from c along the first axis.
std::vector<double> at_sq_distance(std::vector<double> c, double d2) {
  c[0] += std::sqrt(d2);
  return c;
}

}  // namespace

TEST_CASE("effective radius floors and clamps") {
  CHECK(effective_radius(ball({0.0}, 7.5), cfg()) == 7.5);
  CHECK(effective_radius(ball({0.0}, -2.0), cfg()) == 1e-6);
  CHECK(effective_radius(ball({1.0}, 8.05, Geometry::Cosine), cfg()) == doctest::Approx(std::numbers::pi));
  CHECK(effective_radius(ball({1.0}, -1.0, Geometry::Cosine), cfg()) == 1e-6);
}

TEST_CASE("log similarity reference values") {
  const auto b = ball({0.0, 0.0}, 1.0);
  CHECK(log_ball_similarity(std::vector<double>{0.0, 0.0}, b, cfg()) == doctest::Approx(0.69305).epsilon(1e-5));
  CHECK(log_ball_similarity(std::vector<double>{2.0, 0.0}, b, cfg()) == doctest::Approx(0.22312).epsilon(1e-5));
  CHECK(log_ball_similarity(std::vector<double>{2.0, 0.0}, b, cfg()) == doctest::Approx(oracle_log(4.0, 1.0)).epsilon(1e-12));
  const auto tiny = ball({0.0, 0.0}, 1e-6);
  CHECK(log_ball_similarity(std::vector<double>{0.0, 0.0}, tiny, cfg()) == doctest::Approx(oracle_log(0.0, 1e-6)).epsilon(1e-12));
  // As the floor goes to zero the plateau approaches log(1/eps).
  GeometryConfig fine;
  fine.min_radius = 1e-12;
  const auto zero = ball({0.0, 0.0}, 0.0);
  CHECK(log_ball_similarity(std::vector<double>{0.0, 0.0}, zero, fine) == doctest::Approx(9.2104).epsilon(1e-5));
}

TEST_CASE("log similarity map over distinct distances") {
  LatentPatchGrid grid(2, 2, 1);
  const double d2s[] = {0.0, 4.0, 9.0, 16.0};
  for (int i = 0; i < 4; ++i) grid.patch(i / 2, i % 2)[0] = std::sqrt(d2s[i]);
  const auto map = similarity_map(grid, ball({0.0}, 1.0), cfg());
  for (int i = 0; i < 4; ++i) CHECK(map.at(i / 2, i % 2) == doctest::Approx(oracle_log(d2s[i], 1.0)).epsilon(1e-12));
  const auto pooled = max_pool_similarity(map);
  CHECK(pooled.at == GridCoord{0, 0});
}

TEST_CASE("cosine similarity reference values") {
  const auto b = ball({1.0, 2.0, -0.5}, 0.5, Geometry::Cosine);
  CHECK(cos_ball_similarity(std::vector<double>{2.0, 4.0, -1.0}, b, cfg()) == doctest::Approx(0.87758).epsilon(1e-5));
  const auto e = ball({1.0, 0.0}, 0.5, Geometry::Cosine);
  CHECK(cos_ball_similarity(std::vector<double>{0.0, 3.0}, e, cfg()) == doctest::Approx(0.0));
  const auto tiny = ball({1.0, 0.0}, 1e-6, Geometry::Cosine);
  CHECK(cos_ball_similarity(std::vector<double>{1.0, 0.0}, tiny, cfg()) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(cos_ball_similarity(std::vector<double>{0.0, 0.0}, e, cfg()), Error);
}

TEST_CASE("ball distance and membership") {
  const auto b = ball({0.0}, 1.0);
  CHECK(ball_distance(at_sq_distance({0.0}, 0.25), b, cfg()) == 1.0);
  CHECK(ball_distance(at_sq_distance({0.0}, 4.0), b, cfg()) == doctest::Approx(4.0));
  CHECK(is_member(at_sq_distance({0.0}, 0.9), b, cfg()));
  CHECK(is_member(std::vector<double>{1.0}, b, cfg()));
  CHECK_FALSE(is_member(at_sq_distance({0.0}, 1.1), b, cfg()));
  const auto c = ball({1.0, 0.0}, 0.5, Geometry::Cosine);
  CHECK(ball_distance(std::vector<double>{std::cos(0.2), std::sin(0.2)}, c, cfg()) == 0.5);
}

TEST_CASE("max pool ties break row-major first") {
  SimilarityMap m;
  m.height = 2;
  m.width = 2;
  m.values = {0.2, 0.7, 0.1, 0.3};
  auto p = max_pool_similarity(m);
  CHECK(p.value == 0.7);
  CHECK(p.at == GridCoord{0, 1});
  m.values = {0.5, 0.5, 0.5, 0.5};
  CHECK(max_pool_similarity(m).at == GridCoord{0, 0});
  m.values.clear();
  m.height = m.width = 0;
  CHECK_THROWS_AS(max_pool_similarity(m), Error);
}

TEST_CASE("non-finite latent is rejected") {
  const auto b = ball({0.0, 0.0}, 1.0);
  CHECK_THROWS_AS(log_ball_similarity(std::vector<double>{NAN, 0.0}, b, cfg()), NumericError);
  LatentPatchGrid g(1, 1, 3);
  CHECK_THROWS_AS(similarity_map(g, b, cfg()), Error);  // dimension mismatch
}

TEST_CASE("property: range, monotonicity and membership consistency") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ur(0.0, 2.0);
  for (int t = 0; t < 500; ++t) {
    const auto c = random_vec(rng, 4);
    const auto p = random_vec(rng, 4);
    const auto b = ball(c, ur(rng));
    const double s = log_ball_similarity(p, b, cfg());
    const double cap = clamp_value(b, cfg());
    CHECK(s > 0.0);
    CHECK(s <= cap);
    CHECK(is_member(p, b, cfg()) == (ball_distance(p, b, cfg()) == effective_radius(b, cfg())));
    // Moving the patch further away never raises the similarity.
    auto q = p;
    for (size_t i = 0; i < q.size(); ++i) q[i] = c[i] + 1.5 * (p[i] - c[i]);
    CHECK(log_ball_similarity(q, b, cfg()) <= s);

    const auto cb = ball(c, ur(rng), Geometry::Cosine);
    const double cs = cos_ball_similarity(p, cb, cfg());
    CHECK(cs >= -1.0);
    CHECK(cs <= std::cos(effective_radius(cb, cfg())));
    CHECK(is_member(p, cb, cfg()) == (ball_distance(p, cb, cfg()) == effective_radius(cb, cfg())));
  }
}

TEST_CASE("members sit on the plateau") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto c = random_vec(rng, 5);
    const auto b = ball(c, 0.8);
    auto p = c;
    p[0] += 0.5;  // d2 = 0.25 < 0.8
    CHECK(is_member(p, b, cfg()));
    CHECK(log_ball_similarity(p, b, cfg()) == clamp_value(b, cfg()));
  }
}

TEST_CASE("gradients match finite differences outside the ball") {
  std::mt19937_64 rng(5);
  const double h = 1e-5;
  for (Geometry g : {Geometry::Log, Geometry::Cosine}) {
    for (int t = 0; t < 50; ++t) {
      const auto c = random_vec(rng, 3);
      auto p = random_vec(rng, 3);
      PrototypeBall b = ball(c, g == Geometry::Log ? 0.05 : 0.05, g);
      if (center_distance(p, b, cfg()) < 2.0 * effective_radius(b, cfg())) continue;
      const auto grad = similarity_gradient(p, b, cfg());
      for (size_t i = 0; i < p.size(); ++i) {
        auto pp = p, pm = p;
        pp[i] += h;
        pm[i] -= h;
        const double fd = (ball_similarity(pp, b, cfg()) - ball_similarity(pm, b, cfg())) / (2 * h);
        CHECK(grad.d_patch[i] == doctest::Approx(fd).epsilon(1e-3).scale(1e-6));
        auto bp = b, bm = b;
        bp.center[i] += h;
        bm.center[i] -= h;
        const double fdc = (ball_similarity(p, bp, cfg()) - ball_similarity(p, bm, cfg())) / (2 * h);
        CHECK(grad.d_center[i] == doctest::Approx(fdc).epsilon(1e-3).scale(1e-6));
      }
      CHECK(grad.d_radius_param == 0.0);
    }
  }
}

TEST_CASE("pass-through inside the ball") {
  const auto b = ball({0.0, 0.0}, 1.0);
  const std::vector<double> p{0.3, -0.2};
  const auto g = similarity_gradient(p, b, cfg());
  const auto u = unclamped_similarity_gradient(p, b, cfg());
  CHECK(g.value == clamp_value(b, cfg()));
  for (size_t i = 0; i < p.size(); ++i) {
    CHECK(g.d_patch[i] == u.d_patch[i]);
    CHECK(g.d_center[i] == u.d_center[i]);
  }
  CHECK(g.d_radius_param != 0.0);
  CHECK(u.d_radius_param == 0.0);
  // At the radius floor the parameter no longer moves the clamp.
  const auto floored = ball({0.0, 0.0}, -1.0);
  CHECK(similarity_gradient(std::vector<double>{0.0, 0.0}, floored, cfg()).d_radius_param == 0.0);
}
