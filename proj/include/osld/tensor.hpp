#pragma once

#include <cstddef>
#include <cstring>
#include <vector>

#include "osld/errors.hpp"

namespace osld {

// Dense planar tensor, channel-major (CHW). Images are tensors with c == 1.
template <typename T>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {}

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }

  T& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
  const T& at(int ci, int y, int x) const {
    return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
  }

  T* plane(int ci) { return v.data() + static_cast<std::size_t>(ci) * plane_size(); }
  const T* plane(int ci) const { return v.data() + static_cast<std::size_t>(ci) * plane_size(); }

  void zero() { std::memset(v.data(), 0, v.size() * sizeof(T)); }
  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(c, h, w);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T x : t.v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

// argmax with row-major-first tie break: first strictly greater wins.
template <typename T>
inline std::pair<int, int> argmax_xy(const Tensor<T>& map, int channel = 0) {
  require(!map.empty(), "argmax_xy: empty map");
  const T* p = map.plane(channel);
  int best = 0;
  for (int i = 1; i < map.h * map.w; ++i)
    if (p[i] > p[best]) best = i;
  return {best % map.w, best / map.w};
}

}  // namespace osld
