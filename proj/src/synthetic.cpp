#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "protoconcepts/data.hpp"
#include "protoconcepts/diagnostics.hpp"

namespace fs = std::filesystem;

namespace protoconcepts {

namespace {

constexpr std::array<const char*, 6> kShapes = {"circle", "square", "triangle", "cross", "diamond", "ring"};
constexpr std::array<const char*, 6> kColors = {"red", "green", "blue", "yellow", "magenta", "cyan"};
constexpr std::array<std::array<double, 3>, 6> kRgb = {{
    {220, 40, 40}, {40, 190, 60}, {50, 80, 220}, {230, 210, 40}, {200, 50, 200}, {40, 200, 210}}};
constexpr int kMaxClasses = 36;

// Class c uses shape c % 6 and color (c / 6 + c) % 6, so every pair is distinct.
int shape_of(int cls) { return cls % 6; }
int color_of(int cls) { return (cls / 6 + cls) % 6; }

bool inside(int shape, double dx, double dy, double s) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (shape) {
    case 0: return dx * dx + dy * dy <= s * s;
    case 1: return ax <= 0.85 * s && ay <= 0.85 * s;
    case 2: {
      // Upward triangle with apex at -s and base at +0.8 s.
      if (dy < -s || dy > 0.8 * s) return false;
      const double half = (dy + s) / 1.8 * s * 0.95;
      return ax <= half;
    }
    case 3: return (ax <= 0.3 * s && ay <= s) || (ay <= 0.3 * s && ax <= s);
    case 4: return ax + ay <= 1.1 * s;
    case 5: {
      const double r2 = dx * dx + dy * dy;
      return r2 <= s * s && r2 >= 0.3 * s * s;
    }
  }
  return false;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

struct Render {
  Image image;
  Image mask;
};

Render render(const SyntheticConceptSpec& spec, int cls, std::mt19937_64& rng) {
  const int n = spec.image_size;
  const double scale = n / 64.0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Low-frequency texture from a handful of random plane waves, slightly tinted.
  const double base = 90.0 + 80.0 * unit(rng);
  std::array<double, 3> tint{};
  for (auto& t : tint) t = spec.noise * 60.0 * (2.0 * unit(rng) - 1.0);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<Wave, 4> waves{};
  for (auto& w : waves) {
    const double angle = 2.0 * std::numbers::pi * unit(rng);
    const double freq = (0.05 + 0.2 * unit(rng)) / scale;
    w = {freq * std::cos(angle), freq * std::sin(angle), 2.0 * std::numbers::pi * unit(rng),
         spec.noise * 140.0 * unit(rng)};
  }

  const int shape = shape_of(cls);
  const auto& rgb = kRgb[static_cast<size_t>(color_of(cls))];
  const double size = (12.0 + 7.0 * unit(rng)) * scale;
  const double margin = size + 2.0 * scale;
  const double cx = margin + (n - 2.0 * margin) * unit(rng);
  const double cy = margin + (n - 2.0 * margin) * unit(rng);
  std::array<double, 3> color{};
  for (int c = 0; c < 3; ++c) color[static_cast<size_t>(c)] = rgb[static_cast<size_t>(c)] + spec.noise * 120.0 * (2.0 * unit(rng) - 1.0);

  Render out{Image(n, n, 3), Image(n, n, 1)};
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double tex = 0.0;
      for (const auto& w : waves) tex += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
      const bool on = inside(shape, x + 0.5 - cx, y + 0.5 - cy, size);
      out.mask.at(x, y, 0) = on ? 255 : 0;
      for (int c = 0; c < 3; ++c) {
        const double pixel_noise = spec.noise * 70.0 * gauss(rng);
        const double v = on ? color[static_cast<size_t>(c)] + 0.3 * tex + pixel_noise
                            : base + tint[static_cast<size_t>(c)] + tex + pixel_noise;
        out.image.at(x, y, c) = to_byte(v);
      }
    }
  }
  return out;
}

}  // namespace

void SyntheticConceptSpec::validate() const {
  if (num_classes < 1 || num_classes > kMaxClasses) {
    throw ConfigError("synthetic classes must be in [1, " + std::to_string(kMaxClasses) + "]");
  }
  if (image_size < 16) throw ConfigError("synthetic image size must be >= 16");
  if (train_per_class < 1 || test_per_class < 0) throw ConfigError("synthetic split sizes are invalid");
  if (noise < 0.0 || noise > 1.0) throw ConfigError("synthetic noise must lie in [0, 1]");
}

std::string synthetic_class_name(int cls) {
  return std::string(kColors[static_cast<size_t>(color_of(cls))]) + "_" + kShapes[static_cast<size_t>(shape_of(cls))];
}

DatasetManifest generate_synthetic(const SyntheticConceptSpec& spec, const fs::path& root) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error("cannot create synthetic dataset root '" + root.string() + "': " + ec.message());
  const std::array<std::pair<const char*, int>, 2> splits = {{{"train", spec.train_per_class}, {"test", spec.test_per_class}}};
  for (size_t s = 0; s < splits.size(); ++s) {
    const auto& [split, count] = splits[s];
    for (int c = 0; c < spec.num_classes; ++c) {
      const std::string cname = synthetic_class_name(c);
      const fs::path img_dir = root / split / cname;
      const fs::path mask_dir = root / "masks" / split / cname;
      fs::create_directories(img_dir);
      fs::create_directories(mask_dir);
      for (int i = 0; i < count; ++i) {
        std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                          static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(i)};
        std::mt19937_64 rng(seq);
        const auto r = render(spec, c, rng);
        char name[32];
        std::snprintf(name, sizeof(name), "img_%04d.png", i);
        write_png(r.image, img_dir / name);
        write_png(r.mask, mask_dir / name);
      }
    }
  }
  return load_directory_dataset(root, spec.image_size);
}

fs::path concept_mask_path(const DatasetManifest& manifest, const ManifestEntry& entry) {
  return manifest.root / "masks" / fs::path(entry.id);
}

std::vector<Image> load_concept_masks(const DatasetManifest& manifest, Split split) {
  std::vector<Image> out;
  for (const auto& e : manifest.split(split)) {
    Image mask = read_image(concept_mask_path(manifest, e));
    if (mask.channels != 1) throw Error("concept mask for '" + e.id + "' is not grayscale");
    out.push_back(resize_bilinear(mask, manifest.resolution, manifest.resolution));
  }
  return out;
}

int cell_concept(const Image& mask, GridCoord cell, int grid_size, int label) {
  const int sy = mask.height / grid_size;
  const int sx = mask.width / grid_size;
  int on = 0;
  for (int y = cell.row * sy; y < (cell.row + 1) * sy; ++y)
    for (int x = cell.col * sx; x < (cell.col + 1) * sx; ++x) on += mask.at(x, y, 0) >= 128 ? 1 : 0;
  return 2 * on >= sx * sy ? label : -1;
}

}  // namespace protoconcepts
