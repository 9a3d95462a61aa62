#include "protoconcepts/image_io.hpp"

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <memory>

#include "protoconcepts/diagnostics.hpp"

namespace protoconcepts {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error("cannot open image file '" + path.string() + "'");
  return f;
}

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error("unreadable image '" + path.string() + "': " + img.message);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), gray ? 1 : 3);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error("unreadable image '" + path.string() + "': " + img.message);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  Image out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error("unreadable image '" + path.string() + "': corrupt JPEG");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out = Image(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height),
              static_cast<int>(cinfo.output_components));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<size_t>(cinfo.output_scanline) * out.width * out.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::array<unsigned char, 8> sig{};
  {
    FilePtr f = open_file(path, "rb");
    if (std::fread(sig.data(), 1, sig.size(), f.get()) < 3) throw Error("unreadable image '" + path.string() + "'");
  }
  if (png_sig_cmp(sig.data(), 0, sig.size()) == 0) return read_png(path);
  if (sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return read_jpeg(path);
  throw Error("unreadable image '" + path.string() + "': unsupported format");
}

void write_png(const Image& image, const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw Error("cannot write image '" + path.string() + "': " + img.message);
  }
}

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  Image out(image.width, image.height, 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(x, y, 0);
  return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
  if (image.width == width && image.height == height) return image;
  Image out(width, height, image.channels);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * image.at(x0, y0, c) + wx * image.at(x1, y0, c)) +
                         wy * ((1 - wx) * image.at(x0, y1, c) + wx * image.at(x1, y1, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

Image crop(const Image& image, int x1, int y1, int x2, int y2) {
  x1 = std::clamp(x1, 0, image.width);
  x2 = std::clamp(x2, x1, image.width);
  y1 = std::clamp(y1, 0, image.height);
  y2 = std::clamp(y2, y1, image.height);
  Image out(x2 - x1, y2 - y1, image.channels);
  for (int y = y1; y < y2; ++y)
    for (int x = x1; x < x2; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(x - x1, y - y1, c) = image.at(x, y, c);
  return out;
}

}  // namespace protoconcepts
