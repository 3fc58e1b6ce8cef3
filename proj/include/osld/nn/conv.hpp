#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <vector>

#include "osld/rng.hpp"
#include "osld/tensor.hpp"

namespace osld::nn {

template <typename T>
using Pyramid = std::vector<Tensor<T>>;

// Plain 2-D convolution parameters plus accumulated gradients. Forward and
// backward are free functions writing through raw plane pointers so blocks
// can concatenate outputs without copies.
template <typename T>
struct Conv2d {
  int in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0, dilation = 1;
  std::vector<T> w;   // [out_c][in_c][k][k]
  std::vector<T> b;   // [out_c]
  std::vector<T> gw;
  std::vector<T> gb;
};

template <typename T>
Conv2d<T> make_conv(int in_c, int out_c, int k, int stride = 1, int pad = 0,
                    int dilation = 1) {
  require(in_c >= 0 && out_c >= 0 && k >= 1 && stride >= 1 && dilation >= 1,
          "make_conv: bad geometry");
  Conv2d<T> c;
  c.in_c = in_c;
  c.out_c = out_c;
  c.k = k;
  c.stride = stride;
  c.pad = pad;
  c.dilation = dilation;
  const std::size_t nw = static_cast<std::size_t>(out_c) * in_c * k * k;
  c.w.assign(nw, T(0));
  c.b.assign(out_c, T(0));
  c.gw.assign(nw, T(0));
  c.gb.assign(out_c, T(0));
  return c;
}

// He-scaled weights; biases get a small nonzero init so that relu-dead
// pixels never sit exactly on an activation kink (and embedding vectors
// never collapse to the exact origin, where the cosine is singular).
template <typename T>
void init_he(Conv2d<T>& c, Rng& rng) {
  const double stddev = std::sqrt(2.0 / std::max(1, c.in_c * c.k * c.k));
  for (auto& x : c.w) x = static_cast<T>(rng.normal(0.0, stddev));
  for (auto& x : c.b) x = static_cast<T>(rng.normal(0.0, 0.01));
}

inline int conv_out_dim(int in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

namespace detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// col is (in_c*k*k) x (oh*ow), row-major.
template <typename T>
void im2col(const Conv2d<T>& c, const Tensor<T>& x, int oh, int ow, std::vector<T>& col) {
  const int K = c.in_c * c.k * c.k;
  const std::size_t n = static_cast<std::size_t>(oh) * ow;
  col.resize(static_cast<std::size_t>(K) * n);
  T* dst = col.data();
  for (int ci = 0; ci < c.in_c; ++ci) {
    const T* plane = x.plane(ci);
    for (int ky = 0; ky < c.k; ++ky)
      for (int kx = 0; kx < c.k; ++kx) {
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * c.stride - c.pad + ky * c.dilation;
          if (iy < 0 || iy >= x.h) {
            std::memset(dst, 0, sizeof(T) * ow);
            dst += ow;
            continue;
          }
          const T* src_row = plane + static_cast<std::size_t>(iy) * x.w;
          if (c.stride == 1) {
            const int ix0 = -c.pad + kx * c.dilation;
            int ox = 0;
            for (; ox < ow && ix0 + ox < 0; ++ox) dst[ox] = T(0);
            const int run_end = std::min(ow, x.w - ix0);
            for (; ox < run_end; ++ox) dst[ox] = src_row[ix0 + ox];
            for (; ox < ow; ++ox) dst[ox] = T(0);
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * c.stride - c.pad + kx * c.dilation;
              dst[ox] = (ix >= 0 && ix < x.w) ? src_row[ix] : T(0);
            }
          }
          dst += ow;
        }
      }
  }
}

template <typename T>
void col2im_accumulate(const Conv2d<T>& c, const std::vector<T>& dcol, int oh, int ow,
                       Tensor<T>& dx) {
  const T* src = dcol.data();
  for (int ci = 0; ci < c.in_c; ++ci) {
    T* plane = dx.plane(ci);
    for (int ky = 0; ky < c.k; ++ky)
      for (int kx = 0; kx < c.k; ++kx) {
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * c.stride - c.pad + ky * c.dilation;
          if (iy < 0 || iy >= dx.h) {
            src += ow;
            continue;
          }
          T* dst_row = plane + static_cast<std::size_t>(iy) * dx.w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * c.stride - c.pad + kx * c.dilation;
            if (ix >= 0 && ix < dx.w) dst_row[ix] += src[ox];
          }
          src += ow;
        }
      }
  }
}

template <typename T>
std::vector<T>& col_scratch() {
  static thread_local std::vector<T> buf;
  return buf;
}

template <typename T>
std::vector<T>& dcol_scratch() {
  static thread_local std::vector<T> buf;
  return buf;
}

}  // namespace detail

// Writes out_c planes of oh*ow values at out (bias added, no activation).
template <typename T>
void conv_forward(const Conv2d<T>& c, const Tensor<T>& x, T* out, int oh, int ow) {
  require(x.c == c.in_c, "conv_forward: channel mismatch");
  if (c.out_c == 0) return;
  const int K = c.in_c * c.k * c.k;
  const Eigen::Index n = static_cast<Eigen::Index>(oh) * ow;
  auto& col = detail::col_scratch<T>();
  detail::im2col(c, x, oh, ow, col);
  Eigen::Map<const detail::MatR<T>> W(c.w.data(), c.out_c, K);
  Eigen::Map<const detail::MatR<T>> C(col.data(), K, n);
  Eigen::Map<detail::MatR<T>> Y(out, c.out_c, n);
  Y.noalias() = W * C;
  for (int oc = 0; oc < c.out_c; ++oc) Y.row(oc).array() += c.b[oc];
}

// dy has out_c planes at dy_ptr. Parameter gradients accumulate into
// gw/gb; input gradients accumulate into *dx when given.
template <typename T>
void conv_backward(Conv2d<T>& c, const Tensor<T>& x, const T* dy_ptr, int oh, int ow,
                   Tensor<T>* dx) {
  if (c.out_c == 0) return;
  const int K = c.in_c * c.k * c.k;
  const Eigen::Index n = static_cast<Eigen::Index>(oh) * ow;
  auto& col = detail::col_scratch<T>();
  detail::im2col(c, x, oh, ow, col);
  Eigen::Map<const detail::MatR<T>> C(col.data(), K, n);
  Eigen::Map<const detail::MatR<T>> dY(dy_ptr, c.out_c, n);
  Eigen::Map<detail::MatR<T>> gW(c.gw.data(), c.out_c, K);
  gW.noalias() += dY * C.transpose();
  for (int oc = 0; oc < c.out_c; ++oc) c.gb[oc] += dY.row(oc).sum();
  if (dx != nullptr) {
    require(dx->c == c.in_c && dx->h == x.h && dx->w == x.w,
            "conv_backward: dx shape mismatch");
    auto& dcol = detail::dcol_scratch<T>();
    dcol.resize(static_cast<std::size_t>(K) * n);
    Eigen::Map<const detail::MatR<T>> W(c.w.data(), c.out_c, K);
    Eigen::Map<detail::MatR<T>> dC(dcol.data(), K, n);
    dC.noalias() = W.transpose() * dY;
    detail::col2im_accumulate(c, dcol, oh, ow, *dx);
  }
}

template <typename T>
void zero_grad(Conv2d<T>& c) {
  std::fill(c.gw.begin(), c.gw.end(), T(0));
  std::fill(c.gb.begin(), c.gb.end(), T(0));
}

}  // namespace osld::nn
