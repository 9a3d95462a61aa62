#include "protoconcepts/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "protoconcepts/diagnostics.hpp"

namespace fs = std::filesystem;

namespace protoconcepts {

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_children(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && is_image_file(e.path()))) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void probe_image(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  unsigned char sig[4] = {0, 0, 0, 0};
  in.read(reinterpret_cast<char*>(sig), 4);
  const bool png = in && sig[0] == 0x89 && sig[1] == 'P' && sig[2] == 'N' && sig[3] == 'G';
  const bool jpg = in && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF;
  if (!png && !jpg) throw Error("unreadable image '" + p.string() + "'");
}

std::string relative_id(const fs::path& root, const fs::path& p) { return fs::relative(p, root).generic_string(); }

}  // namespace

std::map<std::string, CropBox> read_crop_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read crop table '" + path.string() + "'");
  std::map<std::string, CropBox> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream is(line);
    std::string id;
    CropBox b;
    if (!(is >> id >> b.x1 >> b.y1 >> b.x2 >> b.y2) || b.x2 <= b.x1 || b.y2 <= b.y1) {
      throw Error("crop table '" + path.string() + "' line " + std::to_string(lineno) + " is malformed");
    }
    out[id] = b;
  }
  return out;
}

DatasetManifest load_directory_dataset(const fs::path& root, int resolution, const std::optional<fs::path>& crop_table) {
  if (!fs::is_directory(root)) throw Error("dataset root '" + root.string() + "' does not exist");
  const fs::path train_dir = root / "train";
  if (!fs::is_directory(train_dir)) throw Error("dataset root '" + root.string() + "' has no train/ directory");
  if (resolution < 1) throw ConfigError("resolution must be positive");

  DatasetManifest m;
  m.root = fs::absolute(root);
  m.resolution = resolution;
  for (const auto& d : sorted_children(train_dir, true)) m.classes.push_back(d.filename().string());
  if (m.classes.empty()) throw Error("dataset root '" + root.string() + "' has no class directories");

  auto scan = [&](const fs::path& split_dir, std::vector<ManifestEntry>& out, bool require_all) {
    for (int c = 0; c < m.num_classes(); ++c) {
      const fs::path dir = split_dir / m.classes[static_cast<size_t>(c)];
      if (!fs::is_directory(dir)) {
        if (require_all) throw Error("class '" + m.classes[static_cast<size_t>(c)] + "' has no directory");
        continue;
      }
      const auto files = sorted_children(dir, false);
      if (files.empty()) {
        throw Error("class directory '" + m.classes[static_cast<size_t>(c)] + "' in " + split_dir.filename().string() +
                    " is empty");
      }
      for (const auto& f : files) {
        probe_image(f);
        out.push_back({fs::absolute(f), relative_id(m.root, fs::absolute(f)), c});
      }
    }
    for (const auto& d : sorted_children(split_dir, true)) {
      if (std::find(m.classes.begin(), m.classes.end(), d.filename().string()) == m.classes.end()) {
        throw Error("class '" + d.filename().string() + "' appears in " + split_dir.filename().string() +
                    " but not in train");
      }
    }
  };
  scan(train_dir, m.train, true);
  if (fs::is_directory(root / "test")) scan(root / "test", m.test, false);
  if (crop_table) m.crops = read_crop_table(*crop_table);
  return m;
}

LabeledImages load_split(const DatasetManifest& manifest, Split split) {
  LabeledImages out;
  for (const auto& e : manifest.split(split)) {
    Image img = to_rgb(read_image(e.path));
    if (auto it = manifest.crops.find(e.id); it != manifest.crops.end()) {
      img = crop(img, it->second.x1, it->second.y1, it->second.x2, it->second.y2);
      if (img.width == 0 || img.height == 0) throw Error("crop box for '" + e.id + "' lies outside the image");
    }
    out.images.push_back(resize_bilinear(img, manifest.resolution, manifest.resolution));
    out.labels.push_back(e.label);
    out.ids.push_back(e.id);
  }
  return out;
}

std::uint64_t manifest_hash(const std::vector<ManifestEntry>& entries) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](unsigned char b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (const auto& e : entries) {
    for (char ch : e.id) mix(static_cast<unsigned char>(ch));
    mix(0);
    for (int s = 0; s < 32; s += 8) mix(static_cast<unsigned char>((e.label >> s) & 0xFF));
  }
  return h;
}

void AugmentationSpec::validate() const {
  if (copies < 0) throw ConfigError("augmentation copies must be >= 0");
  if (rotation < 0 || shear < 0 || skew < 0) throw ConfigError("augmentation ranges are magnitudes and must be >= 0");
  if (shear >= 90 || skew >= 90) throw ConfigError("augmentation shear/skew must be below 90 degrees");
}

Image flip_horizontal(const Image& image) {
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(image.width - 1 - x, y, c);
  return out;
}

Image apply_augmentation(const Image& image, const AugmentationDraw& draw) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double cx = (image.width - 1) / 2.0;
  const double cy = (image.height - 1) / 2.0;
  const double ct = std::cos(draw.rotation * deg);
  const double st = std::sin(draw.rotation * deg);
  const double sh = std::tan(draw.shear * deg);
  const double sk = std::tan(draw.skew * deg);
  const double half_h = std::max(1.0, image.height / 2.0);
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      double u = x - cx, v = y - cy;
      const double ru = ct * u - st * v;
      const double rv = st * u + ct * v;
      u = ru + sh * rv;
      v = rv;
      u *= 1.0 + sk * v / half_h;
      double sx = std::clamp(u + cx, 0.0, image.width - 1.0);
      const double sy = std::clamp(v + cy, 0.0, image.height - 1.0);
      if (draw.flip) sx = image.width - 1.0 - sx;
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
      const double wx = sx - x0, wy = sy - y0;
      for (int c = 0; c < image.channels; ++c) {
        const double val = (1 - wy) * ((1 - wx) * image.at(x0, y0, c) + wx * image.at(x1, y0, c)) +
                           wy * ((1 - wx) * image.at(x0, y1, c) + wx * image.at(x1, y1, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(val), 0L, 255L));
      }
    }
  }
  return out;
}

DatasetManifest augment_offline(const DatasetManifest& manifest, const AugmentationSpec& spec, const fs::path& out_root) {
  spec.validate();
  DatasetManifest out = manifest;
  if (spec.copies == 0) return out;
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec) throw Error("cannot create augmentation directory '" + out_root.string() + "': " + ec.message());
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (const auto& e : manifest.train) {
    Image src = read_image(e.path);
    if (auto it = manifest.crops.find(e.id); it != manifest.crops.end()) {
      src = crop(src, it->second.x1, it->second.y1, it->second.x2, it->second.y2);
    }
    const fs::path rel = fs::path(e.id);
    const fs::path dir = out_root / rel.parent_path();
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create '" + dir.string() + "': " + ec.message());
    for (int k = 0; k < spec.copies; ++k) {
      AugmentationDraw d;
      d.rotation = spec.rotation * unit(rng);
      d.shear = spec.shear * unit(rng);
      d.skew = spec.skew * unit(rng);
      d.flip = spec.flip && coin(rng);
      const fs::path dst = dir / (rel.stem().string() + "_aug" + std::to_string(k) + ".png");
      try {
        write_png(apply_augmentation(src, d), dst);
      } catch (const Error& err) {
        throw Error("augmentation failed for '" + e.id + "': " + err.what());
      }
      out.train.push_back({fs::absolute(dst), "aug/" + relative_id(fs::absolute(out_root), fs::absolute(dst)), e.label});
    }
  }
  return out;
}

}  // namespace protoconcepts
