#include "afldm/png.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "afldm/error.hpp"

namespace afldm {

namespace {

void write_rows(const std::filesystem::path& path, const std::vector<png_byte>& pixels, std::int64_t w,
                std::int64_t h, std::int64_t c) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!file) throw Error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::int64_t y = 0; y < h; ++y) png_write_row(png, const_cast<png_byte*>(pixels.data()) + y * w * c);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor& x, double lo, double hi) {
  std::int64_t c = 1, h = 0, w = 0;
  if (x.rank() == 2) {
    h = x.dim(0);
    w = x.dim(1);
  } else if (x.rank() == 3 && (x.dim(0) == 1 || x.dim(0) == 3)) {
    c = x.dim(0);
    h = x.dim(1);
    w = x.dim(2);
  } else {
    throw ShapeError("write_png: expects [H, W], [1, H, W] or [3, H, W], got " + shape_str(x.shape()));
  }
  if (!(hi > lo)) throw ConfigError("write_png: empty value range");
  const auto src = x.data();
  std::vector<png_byte> pixels(static_cast<std::size_t>(h * w * c));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t xi = 0; xi < w; ++xi) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double v = (src[static_cast<std::size_t>((ch * h + y) * w + xi)] - lo) / (hi - lo);
        pixels[static_cast<std::size_t>((y * w + xi) * c + ch)] =
            static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }

  write_rows(path, pixels, w, h, c);
}

Tensor frame_strip(const std::vector<Tensor>& frames) {
  if (frames.empty()) throw ShapeError("frame_strip: no frames");
  return concat(frames, frames.front().rank() - 1);
}

}  // namespace afldm
