#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "osld/errors.hpp"
#include "osld/tensor.hpp"

namespace osld {

namespace detail {

inline int pnm_next_int(std::istream& in, const std::string& path) {
  // skips whitespace and '#' comments
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int value = -1;
  in >> value;
  if (!in) throw data_error("malformed PNM header in " + path);
  return value;
}

}  // namespace detail

// 8/16-bit binary PGM (P5). 16-bit samples are big-endian per the spec.
template <typename T>
Tensor<T> read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open image file " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw data_error("unsupported PGM magic '" + magic + "' in " + path);
  const int w = detail::pnm_next_int(in, path);
  const int h = detail::pnm_next_int(in, path);
  const int maxval = detail::pnm_next_int(in, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw data_error("bad PGM dimensions in " + path);
  in.get();  // single whitespace after maxval
  Tensor<T> img(1, h, w);
  const std::size_t n = img.plane_size();
  if (maxval < 256) {
    std::vector<std::uint8_t> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (!in) throw data_error("truncated PGM data in " + path);
    for (std::size_t i = 0; i < n; ++i) img.v[i] = static_cast<T>(buf[i] / double(maxval));
  } else {
    std::vector<std::uint8_t> buf(n * 2);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 2));
    if (!in) throw data_error("truncated PGM data in " + path);
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned v = (unsigned(buf[2 * i]) << 8) | buf[2 * i + 1];
      img.v[i] = static_cast<T>(v / double(maxval));
    }
  }
  return img;
}

template <typename T>
void write_pgm16(const std::string& path, const Tensor<T>& img) {
  require(img.c == 1, "write_pgm16: grayscale tensor expected");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write image file " + path);
  out << "P5\n" << img.w << " " << img.h << "\n65535\n";
  std::vector<std::uint8_t> buf(img.plane_size() * 2);
  for (std::size_t i = 0; i < img.plane_size(); ++i) {
    const double x = std::clamp(static_cast<double>(img.v[i]), 0.0, 1.0);
    const unsigned q = static_cast<unsigned>(std::lround(x * 65535.0));
    buf[2 * i] = static_cast<std::uint8_t>(q >> 8);
    buf[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw data_error("short write to " + path);
}

template <typename T>
Tensor<T> read_png_gray(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw data_error("cannot read PNG " + path + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw data_error("cannot decode PNG " + path + ": " + image.message);
  }
  Tensor<T> img(1, static_cast<int>(image.height), static_cast<int>(image.width));
  for (std::size_t i = 0; i < img.plane_size(); ++i)
    img.v[i] = static_cast<T>(buf[i] / 255.0);
  return img;
}

// Interleaved RGB8, h x w x 3.
inline void write_png_rgb(const std::string& path, const std::vector<std::uint8_t>& rgb,
                          int h, int w) {
  require(rgb.size() == static_cast<std::size_t>(h) * w * 3, "write_png_rgb: bad buffer size");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr))
    throw data_error("cannot write PNG " + path + ": " + image.message);
}

inline void write_ppm(const std::string& path, const std::vector<std::uint8_t>& rgb, int h,
                      int w) {
  require(rgb.size() == static_cast<std::size_t>(h) * w * 3, "write_ppm: bad buffer size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write image file " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

// Dispatch by extension.
template <typename T>
Tensor<T> read_image(const std::string& path) {
  const std::string ext = std::filesystem::path(path).extension().string();
  if (ext == ".pgm") return read_pgm<T>(path);
  if (ext == ".png") return read_png_gray<T>(path);
  throw data_error("unsupported image extension '" + ext + "' for " + path);
}

}  // namespace osld
