#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "protoconcepts/geometry.hpp"
#include "protoconcepts/image_io.hpp"

namespace protoconcepts {

struct ManifestEntry {
  std::filesystem::path path;  ///< absolute file path
  std::string id;              ///< path relative to the dataset root, '/'-separated
  int label = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct CropBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool operator==(const CropBox&) const = default;
};

enum class Split { Train, Test };

/// On-disk layout: root/<split>/<class_name>/<image files>.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> classes;
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> test;
  int resolution = 64;
  std::map<std::string, CropBox> crops;  ///< keyed by entry id

  const std::vector<ManifestEntry>& split(Split s) const { return s == Split::Train ? train : test; }
  int num_classes() const { return static_cast<int>(classes.size()); }
};

/// Reads a crop table: one `image_path x1 y1 x2 y2` per line, paths relative to the root.
std::map<std::string, CropBox> read_crop_table(const std::filesystem::path& path);

/// Lexicographic, deterministic manifest of root/train and root/test.
/// Errors: missing root or split, empty class directory (names the class).
DatasetManifest load_directory_dataset(const std::filesystem::path& root, int resolution,
                                       const std::optional<std::filesystem::path>& crop_table = std::nullopt);

struct LabeledImages {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::string> ids;

  size_t size() const { return images.size(); }
};

/// Decodes one split: crop (if tabled), convert to RGB, bilinear resize to the manifest resolution.
LabeledImages load_split(const DatasetManifest& manifest, Split split);

/// Stable 64-bit FNV-1a over the ids and labels of a split.
std::uint64_t manifest_hash(const std::vector<ManifestEntry>& entries);

struct AugmentationSpec {
  double rotation = 15.0;  ///< degrees, sampled in [-rotation, rotation]
  double shear = 10.0;     ///< degrees
  double skew = 10.0;      ///< degrees of perspective tilt
  bool flip = true;
  int copies = 4;
  std::uint64_t seed = 1;

  void validate() const;
};

struct AugmentationDraw {
  double rotation = 0.0;
  double shear = 0.0;
  double skew = 0.0;
  bool flip = false;
};

Image flip_horizontal(const Image& image);
/// Inverse-mapped bilinear warp about the image center; out-of-range samples clamp to the border.
Image apply_augmentation(const Image& image, const AugmentationDraw& draw);

/// Writes `copies` warped variants of every training image under out_root/train/<class>/.
/// The returned manifest lists originals first, then the variants; the test split is unchanged.
DatasetManifest augment_offline(const DatasetManifest& manifest, const AugmentationSpec& spec,
                                const std::filesystem::path& out_root);

struct SyntheticConceptSpec {
  int num_classes = 4;
  int image_size = 64;
  int train_per_class = 200;
  int test_per_class = 100;
  double noise = 0.12;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Shape/color pair defining class `cls` (e.g. "red_circle").
std::string synthetic_class_name(int cls);

/// Renders colored shapes on textured noise to root/<split>/<class>/, with
/// grayscale concept masks (255 = concept pixel) at root/masks/<split>/<class>/.
/// Byte-identical for a fixed spec.
DatasetManifest generate_synthetic(const SyntheticConceptSpec& spec, const std::filesystem::path& root);

/// Mask path for a synthetic entry.
std::filesystem::path concept_mask_path(const DatasetManifest& manifest, const ManifestEntry& entry);

/// Concept masks of every entry of a synthetic split, in manifest order.
std::vector<Image> load_concept_masks(const DatasetManifest& manifest, Split split);

/// Ground-truth concept of one latent cell: the image's class if at least half
/// of the cell's pixel footprint lies on the concept mask, otherwise -1 (background).
int cell_concept(const Image& mask, GridCoord cell, int grid_size, int label);

}  // namespace protoconcepts
