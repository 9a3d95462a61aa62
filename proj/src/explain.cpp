#include "protoconcepts/explain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "protoconcepts/diagnostics.hpp"
#include "protoconcepts/sidecar.hpp"

namespace protoconcepts {

std::vector<double> upsample_bilinear(const SimilarityMap& map, int width, int height) {
  if (map.values.empty()) throw Error("upsample_bilinear: empty map");
  std::vector<double> out(static_cast<size_t>(width) * height);
  auto src = [&](double pos, int dst, int n) {
    return std::clamp((pos + 0.5) * n / dst - 0.5, 0.0, static_cast<double>(n - 1));
  };
  for (int y = 0; y < height; ++y) {
    const double sy = src(y, height, map.height);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, map.height - 1);
    const double wy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = src(x, width, map.width);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, map.width - 1);
      const double wx = sx - x0;
      out[static_cast<size_t>(y) * width + x] = (1 - wy) * ((1 - wx) * map.at(y0, x0) + wx * map.at(y0, x1)) +
                                                wy * ((1 - wx) * map.at(y1, x0) + wx * map.at(y1, x1));
    }
  }
  return out;
}

PixelBox extract_bbox(const SimilarityMap& map, int width, int height) {
  const auto up = upsample_bilinear(map, width, height);
  std::vector<double> sorted = up;
  const size_t rank = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(sorted.size()))) - 1;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(rank), sorted.end());
  const double threshold = sorted[rank];
  PixelBox box{width, height, 0, 0};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (up[static_cast<size_t>(y) * width + x] >= threshold) {
        box.x1 = std::min(box.x1, x);
        box.y1 = std::min(box.y1, y);
        box.x2 = std::max(box.x2, x + 1);
        box.y2 = std::max(box.y2, y + 1);
      }
  return box;
}

namespace {

void scan_grid(const ProtoConceptsNet& net, const LatentPatchGrid& grid, int index, int label, int width, int height,
               std::vector<std::vector<MemberPatch>>& out) {
  for (size_t j = 0; j < net.balls.size(); ++j) {
    const auto& ball = net.balls[j];
    std::optional<PixelBox> box;
    for (int r = 0; r < grid.height; ++r) {
      for (int c = 0; c < grid.width; ++c) {
        const auto patch = grid.patch(r, c);
        if (!is_member(patch, ball, net.geometry_config)) continue;
        if (!box) box = extract_bbox(unclamped_similarity_map(grid, ball, net.geometry_config), width, height);
        MemberPatch m;
        m.image_id = grid.source_image_id;
        m.image_index = index;
        m.cell = {r, c};
        m.similarity = ball_similarity(patch, ball, net.geometry_config);
        m.distance = center_distance(patch, ball, net.geometry_config);
        m.bbox = *box;
        m.label = label;
        m.latent.assign(patch.begin(), patch.end());
        out[j].push_back(std::move(m));
      }
    }
  }
}

}  // namespace

std::vector<std::vector<MemberPatch>> scan_members(const ProtoConceptsNet& net, const LabeledImages& images) {
  std::vector<std::vector<MemberPatch>> out(net.balls.size());
  for (size_t i = 0; i < images.size(); ++i) {
    const auto& img = images.images[i];
    const auto grid = latent_grid(net, img, images.ids[i]);
    scan_grid(net, grid, static_cast<int>(i), images.labels[i], img.width, img.height, out);
  }
  return out;
}

std::vector<std::vector<MemberPatch>> scan_members(const ProtoConceptsNet& net, std::span<const LatentPatchGrid> grids,
                                                   std::span<const int> labels, int image_size) {
  if (grids.size() != labels.size()) throw Error("scan_members: grids and labels differ in length");
  std::vector<std::vector<MemberPatch>> out(net.balls.size());
  for (size_t i = 0; i < grids.size(); ++i) {
    scan_grid(net, grids[i], static_cast<int>(i), labels[i], image_size, image_size, out);
  }
  return out;
}

ConceptGallery build_gallery(int prototype, std::vector<MemberPatch> members, int top_n, std::vector<int> classes) {
  if (top_n < 1) throw ConfigError("top_n must be >= 1");
  std::stable_sort(members.begin(), members.end(), [](const MemberPatch& a, const MemberPatch& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.image_id < b.image_id;
  });
  ConceptGallery g;
  g.prototype = prototype;
  g.classes = std::move(classes);
  std::set<std::string> seen;
  for (auto& m : members) {
    if (static_cast<int>(g.members.size()) >= top_n) break;
    if (!seen.insert(m.image_id).second) continue;
    g.members.push_back(std::move(m));
  }
  return g;
}

std::vector<ConceptGallery> build_galleries(const ProtoConceptsNet& net,
                                            const std::vector<std::vector<MemberPatch>>& members, int top_n) {
  std::vector<ConceptGallery> out;
  for (int j = 0; j < net.num_prototypes(); ++j) {
    std::vector<int> classes;
    for (int c = 0; c < net.num_classes(); ++c)
      if (net.evidence.assignment().assigned(j, c)) classes.push_back(c);
    // Masked prototypes get an empty gallery.
    std::vector<MemberPatch> hits;
    if (net.evidence.active(j)) hits = members[static_cast<size_t>(j)];
    out.push_back(build_gallery(j, std::move(hits), top_n, std::move(classes)));
  }
  return out;
}

Scoresheet local_explanation(const ProtoConceptsNet& net, const Image& image, const std::string& image_id,
                             const std::vector<ConceptGallery>& galleries, int top_p) {
  if (top_p < 1) throw ConfigError("top_p must be >= 1");
  const auto grid = latent_grid(net, image, image_id);
  std::vector<SimilarityMap> maps;
  const auto acts = prototype_activations(net, grid, &maps);
  std::vector<double> sims;
  for (const auto& a : acts) sims.push_back(a.similarity);
  const auto decomposition = logit_decomposition(net, sims);

  Scoresheet sheet;
  sheet.image_id = image_id;
  for (const auto& ce : decomposition) sheet.class_totals.push_back(ce.logit);
  sheet.predicted = argmax_class(sheet.class_totals);

  auto terms = decomposition[static_cast<size_t>(sheet.predicted)].terms;
  std::stable_sort(terms.begin(), terms.end(), [](const EvidenceTerm& a, const EvidenceTerm& b) {
    if (a.contribution != b.contribution) return a.contribution > b.contribution;
    return a.prototype < b.prototype;
  });
  for (const auto& t : terms) {
    if (static_cast<int>(sheet.rows.size()) >= top_p) break;
    ScoresheetRow row;
    row.prototype = t.prototype;
    row.similarity = t.similarity;
    row.weight = t.weight;
    row.contribution = t.contribution;
    row.test_bbox = extract_bbox(unclamped_similarity_map(grid, net.balls[static_cast<size_t>(t.prototype)],
                                                          net.geometry_config),
                                 image.width, image.height);
    if (static_cast<size_t>(t.prototype) < galleries.size()) row.gallery = galleries[static_cast<size_t>(t.prototype)].members;
    sheet.rows.push_back(std::move(row));
  }
  return sheet;
}

double concept_purity(const std::vector<int>& concepts) {
  if (concepts.empty()) return 0.0;
  std::map<int, int> counts;
  for (int c : concepts) ++counts[c];
  int best = 0;
  for (const auto& [_, n] : counts) best = std::max(best, n);
  return static_cast<double>(best) / static_cast<double>(concepts.size());
}

std::vector<int> member_concepts(const std::vector<MemberPatch>& members, const std::vector<Image>& masks, int grid_size) {
  std::vector<int> out;
  out.reserve(members.size());
  for (const auto& m : members) {
    out.push_back(cell_concept(masks.at(static_cast<size_t>(m.image_index)), m.cell, grid_size, m.label));
  }
  return out;
}

double mean_concept_purity(const std::vector<std::vector<MemberPatch>>& members, const std::vector<int>& prune_mask,
                           const std::vector<Image>& masks, int grid_size) {
  double sum = 0.0;
  int considered = 0;
  for (size_t j = 0; j < members.size(); ++j) {
    if (j < prune_mask.size() && prune_mask[j] == 0) continue;
    if (members[j].empty()) continue;
    sum += concept_purity(member_concepts(members[j], masks, grid_size));
    ++considered;
  }
  return considered ? sum / considered : 0.0;
}

double multi_image_fraction(const std::vector<std::vector<MemberPatch>>& members, const std::vector<int>& prune_mask) {
  int considered = 0, multi = 0;
  for (size_t j = 0; j < members.size(); ++j) {
    if (j < prune_mask.size() && prune_mask[j] == 0) continue;
    if (members[j].empty()) continue;
    ++considered;
    std::set<std::string> images;
    for (const auto& m : members[j]) images.insert(m.image_id);
    if (images.size() >= 2) ++multi;
  }
  return considered ? static_cast<double>(multi) / considered : 0.0;
}

std::string members_to_text(const std::vector<std::vector<MemberPatch>>& members) {
  std::ostringstream os;
  os << "prototypes " << members.size() << "\n";
  for (size_t j = 0; j < members.size(); ++j) {
    for (const auto& m : members[j]) {
      os << j << ' ' << m.image_index << ' ' << m.cell.row << ' ' << m.cell.col << ' ' << m.label << ' '
         << format_real(m.similarity) << ' ' << format_real(m.distance) << ' ' << m.bbox.x1 << ' ' << m.bbox.y1 << ' '
         << m.bbox.x2 << ' ' << m.bbox.y2 << ' ' << m.latent.size();
      for (double v : m.latent) os << ' ' << format_real(v);
      os << ' ' << m.image_id << "\n";
    }
  }
  return os.str();
}

std::vector<std::vector<MemberPatch>> members_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string word;
  size_t count = 0;
  if (!(in >> word >> count) || word != "prototypes") throw Error("malformed member cache");
  std::vector<std::vector<MemberPatch>> out(count);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    size_t j = 0, dim = 0;
    MemberPatch m;
    if (!(ls >> j >> m.image_index >> m.cell.row >> m.cell.col >> m.label >> m.similarity >> m.distance >> m.bbox.x1 >>
          m.bbox.y1 >> m.bbox.x2 >> m.bbox.y2 >> dim) ||
        j >= count) {
      throw Error("malformed member cache");
    }
    m.latent.resize(dim);
    for (auto& v : m.latent)
      if (!(ls >> v)) throw Error("malformed member cache");
    ls >> std::ws;
    std::getline(ls, m.image_id);
    out[j].push_back(std::move(m));
  }
  return out;
}

}  // namespace protoconcepts
