#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "protoconcepts/checkpoint.hpp"
#include "protoconcepts/diagnostics.hpp"
#include "protoconcepts/model.hpp"

using namespace protoconcepts;
namespace fs = std::filesystem;

namespace {

ModelSpec small_spec(Geometry g = Geometry::Log) {
  ModelSpec s;
  s.image_size = 32;
  s.latent_dim = 6;
  s.prototypes_per_class = 2;
  s.num_classes = 3;
  s.geometry = g;
  s.radius_init = 0.2;
  s.seed = 9;
  return s;
}

Image noise_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image img(size, size, 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
  return img;
}

double dot(const Tensor3& t, const Tensor3& w) {
  double s = 0.0;
  for (size_t i = 0; i < t.data.size(); ++i) s += t.data[i] * w.data[i];
  return s;
}

Tensor3 random_tensor(int c, int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor3 t(c, h, w);
  for (auto& x : t.data) x = u(rng);
  return t;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("protoconcepts_test_" + name); }

}  // namespace

TEST_CASE("class-specific evidence init") {
  const auto e = init_evidence_class_specific(1, 2);
  CHECK(e.weights() == std::vector<double>{1.0, -0.5, -0.5, 1.0});
  CHECK(init_evidence_class_specific(10, 200).num_prototypes() == 2000);
  CHECK(init_evidence_class_specific(2, 4).num_prototypes() == 8);
  CHECK(e.prune_mask() == std::vector<int>{1, 1});
}

TEST_CASE("evidence logits respect the mask") {
  auto e = init_evidence_class_specific(1, 1);
  const std::vector<double> sims = {0.69305};
  CHECK(e.logits(sims)[0] == doctest::Approx(0.69305));
  e.set_prune_mask({0});
  CHECK(e.logits(sims)[0] == 0.0);
  CHECK_THROWS_AS(e.set_prune_mask({2}), Error);
}

TEST_CASE("forward shapes and resolution check") {
  const auto net = build_net(small_spec());
  CHECK(net.num_prototypes() == 6);
  CHECK(net.grid_size() == 4);
  const std::vector<Image> batch = {noise_image(32, 1), noise_image(32, 2)};
  const auto out = forward(net, batch);
  CHECK(out.logits.size() == 2);
  CHECK(out.logits[0].size() == 3);
  CHECK(out.similarities[1].size() == 6);
  CHECK(out.maps[0][0].height == 4);
  const std::vector<Image> bad = {noise_image(32, 1), noise_image(40, 2)};
  CHECK_THROWS_AS(forward(net, bad), Error);
  auto spec = small_spec();
  spec.backbone = "resnet34";
  CHECK_THROWS_AS(build_net(spec), ConfigError);
}

TEST_CASE("all-masked net gives zero logits") {
  auto net = build_net(small_spec());
  net.evidence.set_prune_mask(std::vector<int>(6, 0));
  const std::vector<Image> batch = {noise_image(32, 3)};
  const auto out = forward(net, batch);
  for (double l : out.logits[0]) CHECK(l == 0.0);
}

TEST_CASE("logit decomposition sums to the logits") {
  auto net = build_net(small_spec());
  net.evidence.set_prune_mask({1, 0, 1, 1, 0, 1});
  const auto img = noise_image(32, 4);
  const std::vector<Image> batch = {img};
  const auto out = forward(net, batch);
  const auto dec = logit_decomposition(net, img);
  REQUIRE(dec.size() == 3);
  for (const auto& ce : dec) {
    double s = 0.0;
    for (const auto& t : ce.terms) {
      CHECK(t.prototype != 1);
      CHECK(t.prototype != 4);
      CHECK(t.contribution == t.similarity * t.weight);
      s += t.contribution;
    }
    CHECK(s == doctest::Approx(out.logits[0][static_cast<size_t>(ce.cls)]).epsilon(1e-12));
    CHECK(ce.logit == out.logits[0][static_cast<size_t>(ce.cls)]);
  }
}

TEST_CASE("cosine radius above pi is clamped with a warning") {
  int warnings = 0;
  auto old = set_warning_sink([&](std::string_view) { ++warnings; });
  auto spec = small_spec(Geometry::Cosine);
  spec.radius_init = 8.05;
  const auto net = build_net(spec);
  set_warning_sink(old);
  CHECK(warnings == 1);
  CHECK(effective_radius(net.balls[0], net.geometry_config) == doctest::Approx(std::numbers::pi));
  CHECK_FALSE(net.addon.squashed());
}

TEST_CASE("conv backward matches finite differences") {
  std::mt19937_64 rng(2);
  Conv2d conv(2, 3, 3, 2, 1);
  conv.init(rng);
  for (auto& b : conv.bias.value) b = 0.1;
  const auto x = random_tensor(2, 5, 5, rng);
  const auto y = conv.forward(x);
  const auto w = random_tensor(y.channels, y.height, y.width, rng);
  const auto gx = conv.backward(x, w, true);
  const double h = 1e-6;
  for (size_t i = 0; i < x.data.size(); i += 3) {
    auto xp = x, xm = x;
    xp.data[i] += h;
    xm.data[i] -= h;
    const double fd = (dot(conv.forward(xp), w) - dot(conv.forward(xm), w)) / (2 * h);
    CHECK(gx.data[i] == doctest::Approx(fd).epsilon(1e-6));
  }
  for (size_t i = 0; i < conv.weight.value.size(); i += 5) {
    const double g = conv.weight.grad[i];
    Conv2d cp = conv, cm = conv;
    cp.weight.value[i] += h;
    cm.weight.value[i] -= h;
    const double fd = (dot(cp.forward(x), w) - dot(cm.forward(x), w)) / (2 * h);
    CHECK(g == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("backbone and add-on backward match finite differences") {
  std::mt19937_64 rng(4);
  TinyCnnBackbone bb(rng);
  AddOnLayers addon(32, 5, Geometry::Log, rng);
  const auto img = image_to_tensor(noise_image(16, 8));
  auto loss = [&](TinyCnnBackbone& b, AddOnLayers& a, const Tensor3& w) { return dot(a.forward(b.forward(img, nullptr), nullptr), w); };
  LayerTrace tb, ta;
  const auto feat = bb.forward(img, &tb);
  const auto z = addon.forward(feat, &ta);
  const auto w = random_tensor(z.channels, z.height, z.width, rng);
  for (auto* p : bb.parameters()) p->zero_grad();
  for (auto* p : addon.parameters()) p->zero_grad();
  bb.backward(tb, addon.backward(ta, w, true));
  const double h = 1e-6;
  auto check_params = [&](std::vector<Param*> ps) {
    for (auto* p : ps) {
      for (size_t i = 0; i < p->value.size(); i += 37) {
        const double orig = p->value[i];
        p->value[i] = orig + h;
        const double lp = loss(bb, addon, w);
        p->value[i] = orig - h;
        const double lm = loss(bb, addon, w);
        p->value[i] = orig;
        CHECK(p->grad[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-4).scale(1e-7));
      }
    }
  };
  check_params(addon.parameters());
  check_params(bb.parameters());
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto net = build_net(small_spec());
  net.evidence.set_prune_mask({1, 1, 0, 1, 1, 1});
  net.balls[3].radius_param = 0.123456789012345678;
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(net, {{"stage", "joint"}, {"seed", "9"}}, path);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.metadata.at("stage") == "joint");
  const std::vector<Image> batch = {noise_image(32, 5), noise_image(32, 6)};
  const auto a = forward(net, batch);
  const auto b = forward(loaded.net, batch);
  CHECK(a.logits == b.logits);
  CHECK(a.similarities == b.similarities);
  CHECK(loaded.net.evidence.prune_mask() == net.evidence.prune_mask());
  CHECK(loaded.net.balls[3].radius_param == net.balls[3].radius_param);

  // Truncated and foreign files are rejected.
  const auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  std::ofstream(path) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  fs::remove(path);
}
