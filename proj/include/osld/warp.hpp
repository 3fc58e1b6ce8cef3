#pragma once

#include <algorithm>
#include <cmath>

#include "osld/geometry.hpp"
#include "osld/tensor.hpp"

namespace osld {

// Bilinear sample with zero fill outside the image. Sampling at exact
// integer coordinates returns the pixel verbatim, which is what makes
// identity warps bitwise no-ops.
template <typename T>
T sample_bilinear(const Tensor<T>& img, int channel, double fx, double fy) {
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    const int y = y0 + dy;
    if (y < 0 || y >= img.h) continue;
    const double wy = dy ? ay : 1.0 - ay;
    if (wy == 0.0) continue;
    for (int dx = 0; dx < 2; ++dx) {
      const int x = x0 + dx;
      if (x < 0 || x >= img.w) continue;
      const double wx = dx ? ax : 1.0 - ax;
      if (wx == 0.0) continue;
      acc += wy * wx * static_cast<double>(img.at(channel, y, x));
    }
  }
  return static_cast<T>(acc);
}

// Center-aligned bilinear resize (the usual src = (dst + 0.5) * scale - 0.5
// mapping). Same-size resize copies exactly.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& src, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "resize_bilinear: bad output size");
  if (out_h == src.h && out_w == src.w) return src;
  Tensor<T> out(src.c, out_h, out_w);
  const double sx = static_cast<double>(src.w) / out_w;
  const double sy = static_cast<double>(src.h) / out_h;
  for (int c = 0; c < src.c; ++c)
    for (int y = 0; y < out_h; ++y) {
      const double fy = (y + 0.5) * sy - 0.5;
      for (int x = 0; x < out_w; ++x) {
        const double fx = (x + 0.5) * sx - 0.5;
        out.at(c, y, x) = sample_bilinear(src, c, std::clamp(fx, 0.0, src.w - 1.0),
                                          std::clamp(fy, 0.0, src.h - 1.0));
      }
    }
  return out;
}

// Inverse warp: out(x, y) = src(A^-1 (x, y)), zero border fill. A maps
// source coordinates to output coordinates, matching Affine2::apply on
// landmark points.
template <typename T>
Tensor<T> warp_affine(const Tensor<T>& src, const Affine2& fwd, int out_h, int out_w) {
  Tensor<T> out(src.c, out_h, out_w);
  const Affine2 inv = fwd.inverse();
  for (int c = 0; c < src.c; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        double fx, fy;
        inv.apply(static_cast<double>(x), static_cast<double>(y), fx, fy);
        out.at(c, y, x) = sample_bilinear(src, c, fx, fy);
      }
  return out;
}

}  // namespace osld
