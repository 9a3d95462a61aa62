// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "protoconcepts/checkpoint.hpp"
#include "protoconcepts/config.hpp"
#include "protoconcepts/explain.hpp"
#include "protoconcepts/geometry.hpp"
#include "protoconcepts/losses.hpp"
#include "protoconcepts/training.hpp"

using namespace protoconcepts;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::vector<double> random_vec(std::mt19937_64& rng, int d, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<size_t>(d));
  for (auto& x : v) x = u(rng);
  return v;
}

// Independent reference activations.
double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double norm(const std::vector<double>& a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

double protopnet_activation(const std::vector<double>& p, const std::vector<double>& c, double eps) {
  const double d2 = sq_dist(p, c);
  return std::log((d2 + 1.0) / (d2 + eps));
}

double cosine(const std::vector<double>& p, const std::vector<double>& c) {
  double dot = 0.0;
  for (size_t i = 0; i < p.size(); ++i) dot += p[i] * c[i];
  return dot / (norm(p) * norm(c));
}

// Gradients of the unclamped activations with respect to the patch.
std::vector<double> protopnet_grad_patch(const std::vector<double>& p, const std::vector<double>& c, double eps) {
  const double d2 = sq_dist(p, c);
  const double k = 1.0 / (d2 + 1.0) - 1.0 / (d2 + eps);
  std::vector<double> g(p.size());
  for (size_t i = 0; i < p.size(); ++i) g[i] = 2.0 * k * (p[i] - c[i]);
  return g;
}

std::vector<double> cosine_grad_patch(const std::vector<double>& p, const std::vector<double>& c) {
  const double np = norm(p), nc = norm(c), cs = cosine(p, c);
  std::vector<double> g(p.size());
  for (size_t i = 0; i < p.size(); ++i) g[i] = c[i] / (np * nc) - cs * p[i] / (np * np);
  return g;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

// ---------------------------------------------------------------------------

Outcome criterion_1() {
  const auto t0 = Clock::now();
  const GeometryConfig cfg;
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (Geometry g : {Geometry::Log, Geometry::Cosine}) {
    for (int t = 0; t < 1000; ++t) {
      const auto c = random_vec(rng, 8);
      const auto p = random_vec(rng, 8);
      const PrototypeBall b{c, cfg.min_radius, g};
      const double want = g == Geometry::Log ? protopnet_activation(p, c, cfg.epsilon) : cosine(p, c);
      worst = std::max(worst, std::abs(ball_similarity(p, b, cfg) - want));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 5.0, fmt("max |diff| %.3g over 2x1000 pairs in %.3f s", worst, secs)};
}

Outcome criterion_2() {
  const GeometryConfig cfg;
  struct Case {
    double got, exact, rounded;
  };
  const std::vector<double> origin = {0.0, 0.0};
  const std::vector<double> two = {2.0, 0.0};
  const std::vector<double> dir = {0.3, -0.4, 1.2};
  std::vector<double> dir2 = dir;
  for (auto& x : dir2) x *= 2.5;
  const std::vector<Case> cases = {
      {ball_similarity(origin, {origin, 1.0, Geometry::Log}, cfg), std::log(2.0 / 1.0001), 0.69305},
      {ball_similarity(two, {origin, 1.0, Geometry::Log}, cfg), std::log(5.0 / 4.0001), 0.22312},
      {ball_similarity(dir2, {dir, 0.5, Geometry::Cosine}, cfg), std::cos(0.5), 0.87758},
  };
  double worst_exact = 0.0, worst_rounded = 0.0;
  for (const auto& c : cases) {
    worst_exact = std::max(worst_exact, std::abs(c.got - c.exact));
    worst_rounded = std::max(worst_rounded, std::abs(c.got - c.rounded));
  }
  // The tabulated values carry five decimals, so they agree to half a unit in the last place.
  const bool ok = worst_exact <= 1e-6 && worst_rounded <= 5e-6;
  return {ok, fmt("max |diff| %.3g vs closed form, %.3g vs 5-decimal values", worst_exact, worst_rounded)};
}

Outcome criterion_3() {
  const GeometryConfig cfg;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> ur(0.05, 2.0), frac(0.0, 0.999);
  int mismatches = 0, checked = 0;
  for (Geometry g : {Geometry::Log, Geometry::Cosine}) {
    for (int t = 0; t < 1000; ++t) {
      auto c = random_vec(rng, 6);
      const double r = g == Geometry::Log ? ur(rng) : 0.5 * ur(rng);
      const PrototypeBall b{c, r, g};
      std::vector<double> p = c;
      if (g == Geometry::Log) {
        // Offset along a random direction with squared length below r.
        auto dir = random_vec(rng, 6);
        const double scale = std::sqrt(frac(rng) * r) / norm(dir);
        for (size_t i = 0; i < p.size(); ++i) p[i] += scale * dir[i];
      } else {
        // Scaled copy of the center rotated by less than r inside the plane of two axes.
        const double a = frac(rng) * r;
        const double s = 0.5 + ur(rng);
        p[0] = s * (std::cos(a) * c[0] - std::sin(a) * c[1]);
        p[1] = s * (std::sin(a) * c[0] + std::cos(a) * c[1]);
        for (size_t i = 2; i < p.size(); ++i) p[i] = s * c[i];
      }
      if (!is_member(p, b, cfg)) {
        ++mismatches;
        continue;
      }
      ++checked;
      if (ball_similarity(p, b, cfg) != clamp_value(b, cfg)) ++mismatches;
    }
  }
  return {mismatches == 0 && checked == 2000, fmt("%d member patches checked, %d not on the plateau", checked, mismatches)};
}

double brute_min_k_sum(const std::vector<double>& v, int k) {
  const int n = static_cast<int>(v.size());
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != k) continue;
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) s += v[static_cast<size_t>(i)];
    best = std::min(best, s);
  }
  return best;
}

Outcome criterion_4() {
  const auto t0 = Clock::now();
  const GeometryConfig cfg;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  bool monotone = true;
  for (int t = 0; t < 100; ++t) {
    const int per_class = 2 + static_cast<int>(rng() % 5);
    const int classes = 2 + static_cast<int>(rng() % 2);
    const int dim = 3;
    const int gh = 2, gw = 3;
    std::vector<PrototypeBall> balls;
    for (int j = 0; j < per_class * classes; ++j) balls.push_back({random_vec(rng, dim), 0.1 * (u(rng) + 1.0), Geometry::Log});
    std::vector<LatentPatchGrid> grids;
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) {
      LatentPatchGrid g(gh, gw, dim);
      for (auto& x : g.values) x = u(rng);
      grids.push_back(g);
      labels.push_back(static_cast<int>(rng() % static_cast<unsigned>(classes)));
    }
    const auto assign = ClassAssignmentView::class_specific(per_class, classes);
    double prev = -1.0;
    for (int k = 1; k <= per_class; ++k) {
      double expected = 0.0;
      for (size_t i = 0; i < grids.size(); ++i) {
        std::vector<double> d;
        for (int j = labels[i] * per_class; j < (labels[i] + 1) * per_class; ++j) {
          const auto& b = balls[static_cast<size_t>(j)];
          const double r = std::max(b.radius_param, cfg.min_radius);
          double best = std::numeric_limits<double>::infinity();
          for (int r0 = 0; r0 < gh; ++r0)
            for (int c0 = 0; c0 < gw; ++c0) {
              const auto p = grids[i].patch(r0, c0);
              best = std::min(best, std::max(sq_dist(std::vector<double>(p.begin(), p.end()), b.center), r));
            }
          d.push_back(best);
        }
        expected += brute_min_k_sum(d, k);
      }
      expected /= static_cast<double>(grids.size());
      const double got = topk_cluster_loss(grids, labels, balls, assign, k, cfg);
      worst = std::max(worst, std::abs(got - expected));
      if (got < prev) monotone = false;
      prev = got;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && monotone && secs < 10.0,
          fmt("max |diff| %.3g over 100 instances, monotone in k: %s, %.3f s", worst, monotone ? "yes" : "no", secs)};
}

Outcome criterion_5() {
  const GeometryConfig cfg;
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> ur(0.01, 0.1), big(0.1, 5.0);
  const double h = 1e-6;
  double worst = 0.0;
  int points = 0;
  for (Geometry g : {Geometry::Log, Geometry::Cosine}) {
    int taken = 0;
    while (taken < 100) {
      const auto c = random_vec(rng, 5);
      const auto p = random_vec(rng, 5);
      const PrototypeBall b{c, ur(rng), g};
      if (center_distance(p, b, cfg) < 2.0 * effective_radius(b, cfg)) continue;
      ++taken;
      const auto grad = similarity_gradient(p, b, cfg);
      std::vector<double> fp(p.size()), fc(c.size());
      for (size_t i = 0; i < p.size(); ++i) {
        auto pp = p, pm = p;
        pp[i] += h;
        pm[i] -= h;
        fp[i] = (ball_similarity(pp, b, cfg) - ball_similarity(pm, b, cfg)) / (2 * h);
        auto bp = b, bm = b;
        bp.center[i] += h;
        bm.center[i] -= h;
        fc[i] = (ball_similarity(p, bp, cfg) - ball_similarity(p, bm, cfg)) / (2 * h);
      }
      worst = std::max({worst, rel_err(grad.d_patch, fp), rel_err(grad.d_center, fc)});
    }
    points += taken;
  }
  for (int t = 0; t < 100; ++t) {
    std::vector<PrototypeBall> balls = {{{0.0}, big(rng), Geometry::Log}, {{0.0}, big(rng), Geometry::Log}};
    const double analytic = radius_loss_gradient(balls[0], cfg);
    auto up = balls, dn = balls;
    up[0].radius_param += h;
    dn[0].radius_param -= h;
    const double fd = (radius_loss(up, cfg) - radius_loss(dn, cfg)) / (2 * h);
    worst = std::max(worst, std::abs(analytic - fd) / std::abs(fd));
    ++points;
  }
  return {worst < 1e-3, fmt("max relative error %.3g over %d points", worst, points)};
}

Outcome criterion_6() {
  const GeometryConfig cfg;
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> ur(0.2, 1.0), frac(0.05, 0.9);
  double worst = 0.0;
  bool radius_inside_nonzero = true, radius_outside_zero = true, rad_loss_nonzero = true;
  for (Geometry g : {Geometry::Log, Geometry::Cosine}) {
    for (int t = 0; t < 100; ++t) {
      const auto c = random_vec(rng, 4);
      const double r = g == Geometry::Log ? ur(rng) : 0.5 * ur(rng);
      const PrototypeBall b{c, r, g};
      std::vector<double> p = c;
      if (g == Geometry::Log) {
        p[0] += std::sqrt(frac(rng) * r);
      } else {
        const double a = frac(rng) * r;
        p[0] = std::cos(a) * c[0] - std::sin(a) * c[1];
        p[1] = std::sin(a) * c[0] + std::cos(a) * c[1];
      }
      if (!is_member(p, b, cfg)) return {false, "constructed point fell outside its ball"};
      const auto grad = similarity_gradient(p, b, cfg);
      const auto ref = g == Geometry::Log ? protopnet_grad_patch(p, c, cfg.epsilon) : cosine_grad_patch(p, c);
      worst = std::max(worst, rel_err(grad.d_patch, ref));
      // The activation depends on p - c (log) or symmetrically on p and c (cosine).
      const auto ref_c = g == Geometry::Log ? [&] {
        auto v = ref;
        for (auto& x : v) x = -x;
        return v;
      }()
                                            : cosine_grad_patch(c, p);
      worst = std::max(worst, rel_err(grad.d_center, ref_c));
      if (grad.d_radius_param == 0.0) radius_inside_nonzero = false;
      if (radius_loss_gradient(b, cfg) == 0.0) rad_loss_nonzero = false;

      // Far outside the ball the radius receives nothing from the similarity.
      auto q = p;
      for (auto& x : q) x *= -3.0;
      if (!is_member(q, b, cfg) && similarity_gradient(q, b, cfg).d_radius_param != 0.0) radius_outside_zero = false;
    }
  }
  const bool ok = worst < 1e-9 && radius_inside_nonzero && radius_outside_zero && rad_loss_nonzero;
  return {ok, fmt("patch/center max relative deviation %.3g; radius grad inside nonzero: %s, outside zero: %s, "
                  "radius loss grad nonzero: %s",
                  worst, radius_inside_nonzero ? "yes" : "no", radius_outside_zero ? "yes" : "no",
                  rad_loss_nonzero ? "yes" : "no")};
}

Image noise_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image img(size, size, 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
  return img;
}

Outcome criterion_7() {
  double worst = 0.0;
  int checks = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ModelSpec spec;
    spec.image_size = 32;
    spec.latent_dim = 6;
    spec.prototypes_per_class = 3;
    spec.num_classes = 3;
    spec.seed = seed;
    spec.radius_init = 0.5;
    const auto before = build_net(spec);
    std::mt19937_64 rng(seed * 77);
    std::vector<int> mask(static_cast<size_t>(before.num_prototypes()));
    for (auto& m : mask) m = static_cast<int>(rng() % 2);
    auto after = before;
    after.evidence.set_prune_mask(mask);
    for (int i = 0; i < 4; ++i) {
      const auto img = noise_image(32, seed * 100 + static_cast<std::uint64_t>(i));
      const std::vector<Image> one = {img};
      const auto pre = forward(before, one).logits[0];
      const auto post = forward(after, one).logits[0];
      const auto dec = logit_decomposition(before, img);
      for (const auto& ce : dec) {
        double removed = 0.0;
        for (const auto& t : ce.terms)
          if (mask[static_cast<size_t>(t.prototype)] == 0) removed += t.contribution;
        worst = std::max(worst, std::abs(post[static_cast<size_t>(ce.cls)] - (pre[static_cast<size_t>(ce.cls)] - removed)));
        ++checks;
      }
    }
  }
  return {worst <= 1e-5, fmt("max |diff| %.3g over %d logits", worst, checks)};
}

// ---------------------------------------------------------------------------
// Training-based criteria share the shipped synthetic preset.

fs::path work_root() { return fs::current_path() / "acceptance_work"; }

PipelineConfig preset(const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  auto cfg = Config::load(fs::path(PROTOCONCEPTS_SOURCE_DIR) / "configs" / "synthetic-small.cfg");
  cfg.set("data.root", (work_root() / "data" / "synthetic-small").string());
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  return make_pipeline_config(cfg);
}

struct Trained {
  PipelineResult result;
  double seconds = 0.0;
  fs::path out;
};

Trained train(const std::string& name, const PipelineConfig& pc) {
  const auto out = work_root() / "runs" / name;
  fs::remove_all(out);
  const auto t0 = Clock::now();
  Trained t{run_pipeline(pc, out), 0.0, out};
  t.seconds = seconds_since(t0);
  std::printf("  [%s] %.1f s, accuracy %.4f -> %.4f, %d/%d prototypes survive\n", name.c_str(), t.seconds,
              t.result.accuracy_before_prune, t.result.accuracy_after_finetune, t.result.prune.surviving,
              t.result.net.num_prototypes());
  std::fflush(stdout);
  return t;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion_8(Trained& main_run) {
  const auto t0 = Clock::now();
  const auto pc = preset();
  const bool preset_shape = pc.data.synthetic_spec.num_classes == 4 && pc.model.image_size == 64 &&
                            pc.data.synthetic_spec.train_per_class == 200 && pc.data.synthetic_spec.test_per_class == 100;
  main_run = train("main", pc);
  const double secs = seconds_since(t0);  // includes dataset generation on first use

  const auto manifest = load_directory_dataset(pc.data.root, pc.model.image_size);
  const auto train_split = load_split(manifest, Split::Train);
  const auto& net = main_run.result.net;
  const auto members = scan_members(net, train_split);
  const auto masks = load_concept_masks(manifest, Split::Train);
  const auto& mask = net.evidence.prune_mask();
  const double multi = multi_image_fraction(members, mask);
  const double purity = mean_concept_purity(members, mask, masks, net.grid_size());
  const double acc = main_run.result.accuracy_after_finetune;
  const bool ok = preset_shape && secs < 600.0 && acc >= 0.90 && multi >= 0.5 && purity >= 0.7;
  return {ok, fmt("test accuracy %.4f, multi-image fraction %.3f, mean purity %.3f, %.1f s", acc, multi, purity, secs)};
}

Outcome criterion_9() {
  const auto t0 = Clock::now();
  const auto base = preset();
  const char* names[] = {"small", "medium", "large"};
  std::vector<Trained> runs;
  for (int i = 0; i < 3; ++i) {
    const auto pc = preset({{"geometry.radius_init", format_real(base.radius_presets[static_cast<size_t>(i)])}});
    runs.push_back(train(std::string("radius_") + names[i], pc));
  }
  const double secs = seconds_since(t0);
  const int s0 = runs[0].result.prune.surviving, s1 = runs[1].result.prune.surviving, s2 = runs[2].result.prune.surviving;
  const double a_small = runs[0].result.accuracy_after_finetune, a_medium = runs[1].result.accuracy_after_finetune;
  const bool ok = s0 <= s1 && s1 <= s2 && s0 < s2 && a_small < a_medium && secs < 1800.0;
  return {ok, fmt("survivors %d/%d/%d, post-prune accuracy small %.4f vs medium %.4f, %.1f s", s0, s1, s2, a_small,
                  a_medium, secs)};
}

Outcome criterion_10() {
  const auto t0 = Clock::now();
  std::vector<Trained> runs;
  for (int k : {1, 5, 10}) runs.push_back(train("k_" + std::to_string(k), preset({{"losses.k", std::to_string(k)}})));
  const double secs = seconds_since(t0);
  const auto& r = runs;
  const int s0 = r[0].result.prune.surviving, s1 = r[1].result.prune.surviving, s2 = r[2].result.prune.surviving;
  const double a0 = r[0].result.accuracy_after_finetune, a1 = r[1].result.accuracy_after_finetune,
               a2 = r[2].result.accuracy_after_finetune;
  const bool ok = s0 <= s1 && s1 <= s2 && a0 <= a1 && a1 <= a2 && secs < 1800.0;
  return {ok, fmt("survivors %d/%d/%d, post-finetune accuracy %.4f/%.4f/%.4f, %.1f s", s0, s1, s2, a0, a1, a2, secs)};
}

Outcome criterion_11(const Trained& main_run) {
  const auto again = train("main_repeat", preset());
  const bool same_metrics = read_bytes(main_run.out / "metrics.txt") == read_bytes(again.out / "metrics.txt");
  const bool same_final =
      read_bytes(main_run.out / "checkpoints" / "final.ckpt") == read_bytes(again.out / "checkpoints" / "final.ckpt");

  const auto& net = main_run.result.net;
  const auto path = work_root() / "roundtrip.ckpt";
  save_checkpoint(net, {{"stage", "final"}}, path);
  const auto loaded = load_checkpoint(path);
  const auto manifest = load_directory_dataset(preset().data.root, net.image_size);
  const auto test = load_split(manifest, Split::Test);
  const auto a = forward(net, test.images);
  const auto b = forward(loaded.net, test.images);
  const bool bit_exact = a.logits == b.logits && a.similarities == b.similarities;
  return {same_metrics && same_final && bit_exact,
          fmt("metrics sidecar identical: %s, final checkpoint identical: %s, reloaded forward bit-exact on %zu images: %s",
              same_metrics ? "yes" : "no", same_final ? "yes" : "no", test.size(), bit_exact ? "yes" : "no")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int n, const char* title, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, title, o.detail.c_str());
    std::fflush(stdout);
  };
  fs::create_directories(work_root());

  report(1, "baseline recovery", criterion_1);
  report(2, "scalar fidelity", criterion_2);
  report(3, "clamp plateau", criterion_3);
  report(4, "top-k oracle", criterion_4);
  report(5, "gradient audit", criterion_5);
  report(6, "straight-through contract", criterion_6);
  report(7, "prune correctness", criterion_7);
  Trained main_run;
  bool have_main = false;
  report(8, "synthetic end-to-end", [&] {
    auto o = criterion_8(main_run);
    have_main = true;
    return o;
  });
  report(9, "radius trend", criterion_9);
  report(10, "top-k trend", criterion_10);
  report(11, "determinism and round trip", [&]() -> Outcome {
    if (!have_main) return {false, "main synthetic run did not complete"};
    return criterion_11(main_run);
  });

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
