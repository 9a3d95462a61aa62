#include "protoconcepts/report.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "protoconcepts/diagnostics.hpp"

namespace fs = std::filesystem;

namespace protoconcepts {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot write report to '" + dir.string() + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("cannot write '" + path.string() + "'");
}

const char* kStyle =
    "<style>body{font-family:sans-serif;margin:1em}section{margin-bottom:1.5em}"
    "img{image-rendering:pixelated;width:128px;margin:2px}table{border-collapse:collapse}"
    "td,th{border:1px solid #ccc;padding:2px 6px}</style>";

std::string box_text(const PixelBox& b) {
  return std::to_string(b.x1) + " " + std::to_string(b.y1) + " " + std::to_string(b.x2) + " " + std::to_string(b.y2);
}

void assert_member(const ProtoConceptsNet& net, int prototype, const MemberPatch& m) {
  if (!is_member(m.latent, net.balls.at(static_cast<size_t>(prototype)), net.geometry_config)) {
    throw Error("gallery entry " + m.image_id + " is not a member of prototype " + std::to_string(prototype));
  }
}

// Writes the member thumbnails of one gallery into dir and returns their HTML.
std::string write_members(const ProtoConceptsNet& net, int prototype, const std::vector<MemberPatch>& members,
                          const LabeledImages& source, const fs::path& dir, const std::string& href_prefix,
                          Sidecar& sc, const std::string& key_prefix) {
  std::string html;
  for (size_t k = 0; k < members.size(); ++k) {
    const auto& m = members[k];
    assert_member(net, prototype, m);
    const std::string name = "member_" + std::to_string(k) + ".png";
    write_png(draw_box(source.images.at(static_cast<size_t>(m.image_index)), m.bbox), dir / name);
    html += "<img src=\"" + href_prefix + name + "\" title=\"" + escape(m.image_id) + "\">";
    const std::string p = key_prefix + "member." + std::to_string(k) + ".";
    sc.add(p + "image", m.image_id);
    sc.add(p + "label", m.label);
    sc.add(p + "row", m.cell.row);
    sc.add(p + "col", m.cell.col);
    sc.add(p + "similarity", m.similarity);
    sc.add(p + "distance", m.distance);
    sc.add(p + "bbox", box_text(m.bbox));
  }
  return html;
}

}  // namespace

Image draw_box(const Image& image, const PixelBox& box) {
  Image out = to_rgb(image);
  const int x1 = std::clamp(box.x1, 0, out.width), x2 = std::clamp(box.x2, 0, out.width);
  const int y1 = std::clamp(box.y1, 0, out.height), y2 = std::clamp(box.y2, 0, out.height);
  if (x2 <= x1 || y2 <= y1) return out;
  auto paint = [&](int x, int y) {
    out.at(x, y, 0) = 255;
    out.at(x, y, 1) = 255;
    out.at(x, y, 2) = 0;
  };
  for (int x = x1; x < x2; ++x) {
    paint(x, y1);
    paint(x, y2 - 1);
  }
  for (int y = y1; y < y2; ++y) {
    paint(x1, y);
    paint(x2 - 1, y);
  }
  return out;
}

Sidecar render_gallery_report(const ProtoConceptsNet& net, const std::vector<ConceptGallery>& galleries,
                              const LabeledImages& source, const fs::path& report_dir) {
  make_dir(report_dir);
  std::error_code ec;
  fs::remove_all(report_dir / "prototypes", ec);
  Sidecar sc;
  sc.add("prototypes", static_cast<int>(galleries.size()));
  std::ostringstream html;
  html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Prototype galleries</title>" << kStyle
       << "</head><body>\n<h1>Prototype galleries</h1>\n";
  for (const auto& g : galleries) {
    const fs::path dir = report_dir / "prototypes" / std::to_string(g.prototype);
    make_dir(dir);
    const std::string p = "prototype." + std::to_string(g.prototype) + ".";
    const bool active = net.evidence.active(g.prototype);
    const auto& ball = net.balls.at(static_cast<size_t>(g.prototype));
    std::string classes;
    for (int c : g.classes) classes += (classes.empty() ? "" : " ") + std::to_string(c);
    sc.add(p + "active", active ? 1 : 0);
    sc.add(p + "classes", classes);
    sc.add(p + "radius", effective_radius(ball, net.geometry_config));
    sc.add(p + "members_shown", static_cast<int>(g.members.size()));
    const std::string imgs =
        write_members(net, g.prototype, g.members, source, dir, "prototypes/" + std::to_string(g.prototype) + "/", sc, p);
    html << "<section id=\"p" << g.prototype << "\"><h2>Prototype " << g.prototype << "</h2>\n<p>classes: "
         << escape(classes) << "; radius " << format_real(effective_radius(ball, net.geometry_config))
         << (active ? "" : "; pruned") << "</p>\n<div>" << imgs << "</div></section>\n";
  }
  html << "</body></html>\n";
  write_text(report_dir / "index.html", html.str());
  sc.write(report_dir / "sidecar.txt");
  return sc;
}

Sidecar render_scoresheet(const ProtoConceptsNet& net, const Scoresheet& sheet, const Image& test_image,
                          const LabeledImages& source, const fs::path& dir) {
  make_dir(dir);
  std::error_code ec;
  fs::remove_all(dir / "rows", ec);
  Sidecar sc;
  sc.add("image", sheet.image_id);
  sc.add("predicted", sheet.predicted);
  for (size_t c = 0; c < sheet.class_totals.size(); ++c) sc.add("total." + std::to_string(c), sheet.class_totals[c]);
  write_png(to_rgb(test_image), dir / "test.png");

  std::ostringstream html;
  html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Scoresheet</title>" << kStyle
       << "</head><body>\n<h1>" << escape(sheet.image_id) << "</h1>\n<p>predicted class " << sheet.predicted
       << "</p>\n<img src=\"test.png\">\n<table><tr><th>prototype</th><th>test patch</th><th>looks like</th>"
          "<th>similarity</th><th>weight</th><th>contribution</th></tr>\n";
  for (size_t r = 0; r < sheet.rows.size(); ++r) {
    const auto& row = sheet.rows[r];
    const fs::path row_dir = dir / "rows" / std::to_string(r);
    make_dir(row_dir);
    write_png(draw_box(test_image, row.test_bbox), row_dir / "test_box.png");
    const std::string p = "row." + std::to_string(r) + ".";
    sc.add(p + "prototype", row.prototype);
    sc.add(p + "similarity", row.similarity);
    sc.add(p + "weight", row.weight);
    sc.add(p + "contribution", row.contribution);
    sc.add(p + "test_bbox", box_text(row.test_bbox));
    const std::string href = "rows/" + std::to_string(r) + "/";
    const std::string imgs = write_members(net, row.prototype, row.gallery, source, row_dir, href, sc, p);
    html << "<tr><td>" << row.prototype << "</td><td><img src=\"" << href << "test_box.png\"></td><td>" << imgs
         << "</td><td>" << format_real(row.similarity) << "</td><td>" << format_real(row.weight) << "</td><td>"
         << format_real(row.contribution) << "</td></tr>\n";
  }
  html << "</table>\n<h2>Class totals</h2>\n<table>";
  for (size_t c = 0; c < sheet.class_totals.size(); ++c) {
    html << "<tr><td>" << c << "</td><td>" << format_real(sheet.class_totals[c]) << "</td></tr>";
  }
  html << "</table></body></html>\n";
  write_text(dir / "index.html", html.str());
  sc.write(dir / "sidecar.txt");
  return sc;
}

}  // namespace protoconcepts
