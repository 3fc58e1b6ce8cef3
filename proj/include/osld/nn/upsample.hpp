#pragma once

#include <vector>

#include "osld/tensor.hpp"

namespace osld::nn {

namespace detail {

// x2 bilinear with half-pixel centers: src = (dst + 0.5) / 2 - 0.5,
// edge-clamped. For even dst the taps are (src-1, src) with weights
// (0.25, 0.75); for odd dst (src, src+1) with (0.75, 0.25).
struct UpTap {
  int i0, i1;
  double w0, w1;
};

inline std::vector<UpTap> up2x_taps(int in_dim) {
  std::vector<UpTap> taps(static_cast<std::size_t>(in_dim) * 2);
  for (int o = 0; o < 2 * in_dim; ++o) {
    const double src = (o + 0.5) / 2.0 - 0.5;
    int i0 = static_cast<int>(std::floor(src));
    const double a = src - i0;
    int i1 = i0 + 1;
    double w0 = 1.0 - a, w1 = a;
    if (i0 < 0) {
      i0 = 0;
      w0 = 1.0 - a;  // clamped tap keeps its weight on pixel 0
    }
    if (i1 > in_dim - 1) i1 = in_dim - 1;
    taps[o] = {i0, i1, w0, w1};
  }
  return taps;
}

}  // namespace detail

template <typename T>
void upsample2x_forward(const Tensor<T>& x, Tensor<T>& y) {
  y = Tensor<T>(x.c, x.h * 2, x.w * 2);
  const auto ty = detail::up2x_taps(x.h);
  const auto tx = detail::up2x_taps(x.w);
  for (int c = 0; c < x.c; ++c) {
    const T* in = x.plane(c);
    T* out = y.plane(c);
    for (int oy = 0; oy < y.h; ++oy) {
      const auto& t0 = ty[oy];
      const T* r0 = in + static_cast<std::size_t>(t0.i0) * x.w;
      const T* r1 = in + static_cast<std::size_t>(t0.i1) * x.w;
      for (int ox = 0; ox < y.w; ++ox) {
        const auto& t1 = tx[ox];
        const double v = t0.w0 * (t1.w0 * r0[t1.i0] + t1.w1 * r0[t1.i1]) +
                         t0.w1 * (t1.w0 * r1[t1.i0] + t1.w1 * r1[t1.i1]);
        out[static_cast<std::size_t>(oy) * y.w + ox] = static_cast<T>(v);
      }
    }
  }
}

// Transpose of the forward taps; accumulates into dx.
template <typename T>
void upsample2x_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  require(dx.c == dy.c && dx.h * 2 == dy.h && dx.w * 2 == dy.w,
          "upsample2x_backward: shape mismatch");
  const auto ty = detail::up2x_taps(dx.h);
  const auto tx = detail::up2x_taps(dx.w);
  for (int c = 0; c < dy.c; ++c) {
    const T* in = dy.plane(c);
    T* out = dx.plane(c);
    for (int oy = 0; oy < dy.h; ++oy) {
      const auto& t0 = ty[oy];
      T* r0 = out + static_cast<std::size_t>(t0.i0) * dx.w;
      T* r1 = out + static_cast<std::size_t>(t0.i1) * dx.w;
      for (int ox = 0; ox < dy.w; ++ox) {
        const auto& t1 = tx[ox];
        const double g = static_cast<double>(in[static_cast<std::size_t>(oy) * dy.w + ox]);
        r0[t1.i0] += static_cast<T>(t0.w0 * t1.w0 * g);
        r0[t1.i1] += static_cast<T>(t0.w0 * t1.w1 * g);
        r1[t1.i0] += static_cast<T>(t0.w1 * t1.w0 * g);
        r1[t1.i1] += static_cast<T>(t0.w1 * t1.w1 * g);
      }
    }
  }
}

}  // namespace osld::nn
