#pragma once

#include <vector>

#include "osld/nn/conv.hpp"

namespace osld::nn {

template <typename T>
inline void relu_inplace(T* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (p[i] < T(0)) p[i] = T(0);
}

// dy_masked = dy * (out > 0), written into scratch
template <typename T>
inline void relu_mask(const T* out, const T* dy, T* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = out[i] > T(0) ? dy[i] : T(0);
}

// Shared 3x3 conv plus one narrow 3x3 conv per landmark; the block output
// is concat(relu(shared(x)), relu(adapter_k(x))) with shared channels
// first. adapter_channels == 0 degenerates to the plain shared block.
template <typename T>
struct AdapterConvBlock {
  Conv2d<T> shared;
  std::vector<Conv2d<T>> adapters;  // K entries

  int adapter_channels() const { return adapters.empty() ? 0 : adapters[0].out_c; }
  int out_channels() const { return shared.out_c + adapter_channels(); }
  int in_channels() const { return shared.in_c; }
};

template <typename T>
AdapterConvBlock<T> make_adapter_conv_block(int in_c, int shared_out, int adapter_out,
                                            int num_landmarks) {
  require(shared_out >= 1, "adapter block: shared output channels must be >= 1");
  require(adapter_out >= 0, "adapter block: adapter output channels must be >= 0");
  require(num_landmarks >= 1, "adapter block: K must be >= 1");
  AdapterConvBlock<T> blk;
  blk.shared = make_conv<T>(in_c, shared_out, 3, 1, 1);
  for (int k = 0; k < num_landmarks; ++k)
    blk.adapters.push_back(make_conv<T>(in_c, adapter_out, 3, 1, 1));
  return blk;
}

template <typename T>
void check_landmark_id(const std::vector<Conv2d<T>>& adapters, int k) {
  require(k >= 0 && k < static_cast<int>(adapters.size()),
          "unknown landmark id " + std::to_string(k) + " (K = " +
              std::to_string(adapters.size()) + ")");
}

template <typename T>
void adapter_conv_forward(const AdapterConvBlock<T>& blk, const Tensor<T>& x, int k,
                          Tensor<T>& y) {
  check_landmark_id(blk.adapters, k);
  y = Tensor<T>(blk.out_channels(), x.h, x.w);
  conv_forward(blk.shared, x, y.plane(0), x.h, x.w);
  if (blk.adapter_channels() > 0)
    conv_forward(blk.adapters[k], x, y.plane(blk.shared.out_c), x.h, x.w);
  relu_inplace(y.v.data(), y.size());
}

// y is the stored forward output (post-relu), dy the incoming gradient.
// Parameter gradients accumulate; input gradients accumulate into dx.
template <typename T>
void adapter_conv_backward(AdapterConvBlock<T>& blk, const Tensor<T>& x, const Tensor<T>& y,
                           const Tensor<T>& dy, int k, Tensor<T>* dx) {
  check_landmark_id(blk.adapters, k);
  static thread_local std::vector<T> masked;
  masked.resize(dy.size());
  relu_mask(y.v.data(), dy.v.data(), masked.data(), dy.size());
  conv_backward(blk.shared, x, masked.data(), y.h, y.w, dx);
  if (blk.adapter_channels() > 0)
    conv_backward(blk.adapters[k], x, masked.data() + blk.shared.out_c * y.plane_size(),
                  y.h, y.w, dx);
}

// One RFB path (shared or a single adapter's): parallel dilated branches,
// each 1x1 reduce + 3x3 dilated conv, concatenated and projected by 1x1.
template <typename T>
struct RFBPath {
  std::vector<Conv2d<T>> reduce;
  std::vector<Conv2d<T>> dilated;
  Conv2d<T> project;

  int out_channels() const { return project.out_c; }
};

template <typename T>
RFBPath<T> make_rfb_path(int in_c, int out_c, const std::vector<int>& dilations) {
  RFBPath<T> p;
  if (out_c == 0) return p;  // disabled path
  require(!dilations.empty(), "rfb path: need at least one dilation");
  const int bw = std::max(1, out_c / 4);
  for (int d : dilations) {
    require(d >= 1, "rfb path: dilation must be >= 1");
    p.reduce.push_back(make_conv<T>(in_c, bw, 1));
    p.dilated.push_back(make_conv<T>(bw, bw, 3, 1, d, d));
  }
  p.project = make_conv<T>(bw * static_cast<int>(dilations.size()), out_c, 1);
  return p;
}

template <typename T>
struct RFBPathTrace {
  std::vector<Tensor<T>> reduced;  // post-relu per branch
  Tensor<T> cat;                   // post-relu dilated outputs, concatenated
};

template <typename T>
void rfb_path_forward(const RFBPath<T>& p, const Tensor<T>& x, T* out,
                      RFBPathTrace<T>* trace) {
  if (p.out_channels() == 0) return;
  const int nb = static_cast<int>(p.reduce.size());
  const int bw = p.reduce[0].out_c;
  RFBPathTrace<T> local;
  RFBPathTrace<T>& tr = trace ? *trace : local;
  tr.reduced.assign(nb, Tensor<T>());
  tr.cat = Tensor<T>(bw * nb, x.h, x.w);
  for (int b = 0; b < nb; ++b) {
    tr.reduced[b] = Tensor<T>(bw, x.h, x.w);
    conv_forward(p.reduce[b], x, tr.reduced[b].v.data(), x.h, x.w);
    relu_inplace(tr.reduced[b].v.data(), tr.reduced[b].size());
    conv_forward(p.dilated[b], tr.reduced[b], tr.cat.plane(b * bw), x.h, x.w);
    relu_inplace(tr.cat.plane(b * bw), static_cast<std::size_t>(bw) * x.h * x.w);
  }
  conv_forward(p.project, tr.cat, out, x.h, x.w);
}

template <typename T>
void rfb_path_backward(RFBPath<T>& p, const Tensor<T>& x, const RFBPathTrace<T>& tr,
                       const T* dy, int h, int w, Tensor<T>* dx) {
  if (p.out_channels() == 0) return;
  const int nb = static_cast<int>(p.reduce.size());
  const int bw = p.reduce[0].out_c;
  Tensor<T> dcat(tr.cat.c, h, w);
  conv_backward(p.project, tr.cat, dy, h, w, &dcat);  // no relu on the projection
  relu_mask(tr.cat.v.data(), dcat.v.data(), dcat.v.data(), dcat.size());
  for (int b = 0; b < nb; ++b) {
    Tensor<T> dred(bw, h, w);
    conv_backward(p.dilated[b], tr.reduced[b], dcat.plane(b * bw), h, w, &dred);
    relu_mask(tr.reduced[b].v.data(), dred.v.data(), dred.v.data(), dred.size());
    conv_backward(p.reduce[b], x, dred.v.data(), h, w, dx);
  }
}

// RFB with adapters: the block output is concat(shared path, adapter-k
// path) along channels, shared first, mirroring the conv blocks.
template <typename T>
struct RFBAdapterBlock {
  RFBPath<T> shared;
  std::vector<RFBPath<T>> adapters;
  std::vector<int> dilations;

  int adapter_channels() const { return adapters.empty() ? 0 : adapters[0].out_channels(); }
  int out_channels() const { return shared.out_channels() + adapter_channels(); }
};

template <typename T>
RFBAdapterBlock<T> make_rfb_adapter_block(int in_c, int shared_out, int adapter_out,
                                          int num_landmarks, std::vector<int> dilations) {
  require(shared_out >= 1, "rfb block: shared output channels must be >= 1");
  require(adapter_out >= 0, "rfb block: adapter output channels must be >= 0");
  RFBAdapterBlock<T> blk;
  blk.dilations = std::move(dilations);
  blk.shared = make_rfb_path<T>(in_c, shared_out, blk.dilations);
  for (int k = 0; k < num_landmarks; ++k)
    blk.adapters.push_back(make_rfb_path<T>(in_c, adapter_out, blk.dilations));
  return blk;
}

template <typename T>
struct RFBBlockTrace {
  RFBPathTrace<T> shared;
  RFBPathTrace<T> adapter;
};

template <typename T>
void rfb_adapter_forward(const RFBAdapterBlock<T>& blk, const Tensor<T>& x, int k,
                         Tensor<T>& y, RFBBlockTrace<T>* trace) {
  require(k >= 0 && k < static_cast<int>(blk.adapters.size()),
          "unknown landmark id " + std::to_string(k));
  y = Tensor<T>(blk.out_channels(), x.h, x.w);
  rfb_path_forward(blk.shared, x, y.plane(0), trace ? &trace->shared : nullptr);
  if (blk.adapter_channels() > 0)
    rfb_path_forward(blk.adapters[k], x, y.plane(blk.shared.out_channels()),
                     trace ? &trace->adapter : nullptr);
}

template <typename T>
void rfb_adapter_backward(RFBAdapterBlock<T>& blk, const Tensor<T>& x,
                          const RFBBlockTrace<T>& trace, const Tensor<T>& dy, int k,
                          Tensor<T>* dx) {
  rfb_path_backward(blk.shared, x, trace.shared, dy.plane(0), dy.h, dy.w, dx);
  if (blk.adapter_channels() > 0)
    rfb_path_backward(blk.adapters[k], x, trace.adapter,
                      dy.plane(blk.shared.out_channels()), dy.h, dy.w, dx);
}

}  // namespace osld::nn
