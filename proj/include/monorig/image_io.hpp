#pragma once

// PNG (via libpng) and PFM readers/writers for the dataset layout.
// PFM: "Pf" header, "<w> <h>", scale -1.0 (little-endian), bottom-up rows.

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "monorig/geometry.hpp"
#include "monorig/tensor.hpp"

namespace monorig::io {

struct ImageU8 {
  int h = 0, w = 0, c = 0;  // c is 1 or 3
  std::vector<uint8_t> v;   // row-major, interleaved
};

struct ImageU16 {
  int h = 0, w = 0;
  std::vector<uint16_t> v;
};

// Double-precision image in [0,1]; what the renderer produces.
struct ImageF {
  int h = 0, w = 0, c = 0;
  std::vector<double> v;

  double at(int y, int x, int ch) const { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
  double& at(int y, int x, int ch) { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
};

inline ImageU8 quantize_u8(const ImageF& img) {
  ImageU8 out;
  out.h = img.h;
  out.w = img.w;
  out.c = img.c;
  out.v.resize(img.v.size());
  for (size_t i = 0; i < img.v.size(); ++i) {
    double x = img.v[i];
    x = x < 0 ? 0 : (x > 1 ? 1 : x);
    out.v[i] = static_cast<uint8_t>(x * 255.0 + 0.5);
  }
  return out;
}

namespace detail {

struct PngCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, PngCloser>;

}  // namespace detail

inline void write_png(const std::string& path, const ImageU8& img) {
  require(img.c == 1 || img.c == 3, "png: channel count must be 1 or 3");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("png: cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);  // pinned for reproducible bytes
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(img.v.data() + static_cast<size_t>(y) * img.w * img.c);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void write_png16(const std::string& path, const ImageU16& img) {
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("png: cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_set_swap(png);  // rows below are host little-endian
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(
        reinterpret_cast<const png_byte*>(img.v.data() + static_cast<size_t>(y) * img.w));
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline ImageU8 read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("png: cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8 || (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: unsupported format (want 8-bit gray/rgb): " + path);
  }
  ImageU8 img;
  img.w = static_cast<int>(png_get_image_width(png, info));
  img.h = static_cast<int>(png_get_image_height(png, info));
  img.c = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  img.v.resize(static_cast<size_t>(img.h) * img.w * img.c);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] = img.v.data() + static_cast<size_t>(y) * img.w * img.c;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline ImageU16 read_png16(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("png: cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: unsupported format (want 16-bit gray): " + path);
  }
  png_set_swap(png);
  ImageU16 img;
  img.w = static_cast<int>(png_get_image_width(png, info));
  img.h = static_cast<int>(png_get_image_height(png, info));
  img.v.resize(static_cast<size_t>(img.h) * img.w);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] =
        reinterpret_cast<png_byte*>(img.v.data() + static_cast<size_t>(y) * img.w);
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// --- PFM ---------------------------------------------------------------------

inline void write_pfm(const std::string& path, const geom::DepthMap& depth) {
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("pfm: cannot open for writing: " + path);
  std::string header = "Pf\n" + std::to_string(depth.w) + " " + std::to_string(depth.h) + "\n-1.0\n";
  std::fwrite(header.data(), 1, header.size(), fp.get());
  std::vector<float> row(static_cast<size_t>(depth.w));
  for (int y = depth.h - 1; y >= 0; --y) {  // bottom-up
    for (int x = 0; x < depth.w; ++x) row[static_cast<size_t>(x)] = static_cast<float>(depth.at(y, x));
    if (std::fwrite(row.data(), 4, row.size(), fp.get()) != row.size())
      throw std::runtime_error("pfm: short write: " + path);
  }
}

inline geom::DepthMap read_pfm(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("pfm: cannot open: " + path);
  char tag[3] = {};
  float scale = 0;
  geom::DepthMap d;
  if (std::fscanf(fp.get(), "%2s %d %d %f", tag, &d.w, &d.h, &scale) != 4 ||
      std::strcmp(tag, "Pf") != 0)
    throw std::runtime_error("pfm: bad header: " + path);
  require(scale < 0, "pfm: big-endian files not supported: " + path);
  std::fgetc(fp.get());  // consume the newline after the scale
  d.v.resize(static_cast<size_t>(d.w) * d.h);
  std::vector<float> row(static_cast<size_t>(d.w));
  for (int y = d.h - 1; y >= 0; --y) {
    if (std::fread(row.data(), 4, row.size(), fp.get()) != row.size())
      throw std::runtime_error("pfm: short read: " + path);
    for (int x = 0; x < d.w; ++x) d.at(y, x) = row[static_cast<size_t>(x)];
  }
  return d;
}

// Tensor bridge: [H,W,3] in [0,1] from an 8-bit image.
template <typename T>
diff::Tensor<T> image_to_tensor(const ImageU8& img) {
  std::vector<T> v(img.v.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.v[i]) / T(255);
  return diff::Tensor<T>::from({img.h, img.w, img.c}, std::move(v));
}

template <typename T>
diff::Tensor<T> image_to_tensor(const ImageF& img) {
  std::vector<T> v(img.v.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.v[i]);
  return diff::Tensor<T>::from({img.h, img.w, img.c}, std::move(v));
}

}  // namespace monorig::io
