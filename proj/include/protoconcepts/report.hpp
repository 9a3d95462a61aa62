#pragma once

#include <filesystem>
#include <vector>

#include "protoconcepts/explain.hpp"
#include "protoconcepts/sidecar.hpp"

namespace protoconcepts {

/// Draws a 1-pixel yellow rectangle outline; the box is clipped to the image.
Image draw_box(const Image& image, const PixelBox& box);

/// Writes report_dir/index.html, report_dir/prototypes/<id>/member_<k>.png (source
/// image with the member's box) and report_dir/sidecar.txt. `source` holds the
/// images the galleries were scanned from. Throws if a gallery entry is not a
/// member of its ball or the directory cannot be written.
Sidecar render_gallery_report(const ProtoConceptsNet& net, const std::vector<ConceptGallery>& galleries,
                              const LabeledImages& source, const std::filesystem::path& report_dir);

/// Writes one scoresheet: dir/index.html, dir/test.png, dir/rows/<r>/member_<k>.png, dir/sidecar.txt.
Sidecar render_scoresheet(const ProtoConceptsNet& net, const Scoresheet& sheet, const Image& test_image,
                          const LabeledImages& source, const std::filesystem::path& dir);

}  // namespace protoconcepts
