#pragma once

#include <span>
#include <string>
#include <vector>

#include "protoconcepts/data.hpp"
#include "protoconcepts/geometry.hpp"
#include "protoconcepts/model.hpp"

namespace protoconcepts {

/// Half-open pixel rectangle [x1, x2) x [y1, y2).
struct PixelBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  bool empty() const { return x2 <= x1 || y2 <= y1; }
  bool operator==(const PixelBox&) const = default;
};

struct MemberPatch {
  std::string image_id;
  int image_index = 0;    ///< index into the scanned image set
  GridCoord cell;
  double similarity = 0.0;  ///< clamped; equals the ball's plateau value
  double distance = 0.0;    ///< unclamped center distance, used for ranking
  PixelBox bbox;
  int label = 0;
  std::vector<double> latent;  ///< the member patch itself
};

/// Bilinear upsampling (half-pixel centers, edge clamped) to width x height, row-major.
std::vector<double> upsample_bilinear(const SimilarityMap& map, int width, int height);

/// Tight rectangle around the upsampled cells at or above the 95th percentile.
PixelBox extract_bbox(const SimilarityMap& map, int width, int height);

/// Tests every cell of every image against every ball, one image at a time.
/// Result is indexed by prototype; within a prototype hits are in scan order.
std::vector<std::vector<MemberPatch>> scan_members(const ProtoConceptsNet& net, const LabeledImages& images);

/// Same scan over precomputed latent grids of image_size x image_size images.
/// Image ids come from the grids' source ids.
std::vector<std::vector<MemberPatch>> scan_members(const ProtoConceptsNet& net, std::span<const LatentPatchGrid> grids,
                                                   std::span<const int> labels, int image_size);

struct ConceptGallery {
  int prototype = 0;
  std::vector<int> classes;  ///< classes the prototype is assigned to
  std::vector<MemberPatch> members;
};

/// Ascending unclamped distance (ties by image id), one entry per image, at most top_n.
ConceptGallery build_gallery(int prototype, std::vector<MemberPatch> members, int top_n, std::vector<int> classes = {});

std::vector<ConceptGallery> build_galleries(const ProtoConceptsNet& net,
                                            const std::vector<std::vector<MemberPatch>>& members, int top_n);

struct ScoresheetRow {
  int prototype = 0;
  double similarity = 0.0;
  double weight = 0.0;
  double contribution = 0.0;
  PixelBox test_bbox;  ///< where the prototype fires in the test image
  std::vector<MemberPatch> gallery;
};

struct Scoresheet {
  std::string image_id;
  int predicted = 0;
  std::vector<double> class_totals;  ///< equal to the forward logits
  std::vector<ScoresheetRow> rows;   ///< top_p by contribution to the predicted class
};

Scoresheet local_explanation(const ProtoConceptsNet& net, const Image& image, const std::string& image_id,
                             const std::vector<ConceptGallery>& galleries, int top_p);

/// Fraction of labels equal to their mode; 0 for an empty list.
double concept_purity(const std::vector<int>& concepts);

/// Ground-truth concept (class label or -1 for background) of each member, from the synthetic masks.
std::vector<int> member_concepts(const std::vector<MemberPatch>& members, const std::vector<Image>& masks, int grid_size);

/// Concept purity averaged over unmasked balls with at least one member.
double mean_concept_purity(const std::vector<std::vector<MemberPatch>>& members, const std::vector<int>& prune_mask,
                           const std::vector<Image>& masks, int grid_size);

/// Fraction of the given balls whose members come from at least two distinct images.
double multi_image_fraction(const std::vector<std::vector<MemberPatch>>& members, const std::vector<int>& prune_mask);

/// Serialized member lists, for the scan cache.
std::string members_to_text(const std::vector<std::vector<MemberPatch>>& members);
std::vector<std::vector<MemberPatch>> members_from_text(const std::string& text);

}  // namespace protoconcepts
