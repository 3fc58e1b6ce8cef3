#pragma once

// Exact windowed training path. The SSL loss reads fine-level query
// embeddings only inside the softmax window around the target, and patch
// embeddings only at their center cells, so fine decoder levels are
// evaluated on small crops (with conv/RFB/upsample halos) instead of full
// maps. Losses and gradients equal the full-path computation up to
// floating-point association; the two coarsest query levels stay full
// because their softmax is global.

#include <algorithm>

#include "osld/augment.hpp"
#include "osld/nn/model.hpp"
#include "osld/ssl.hpp"

namespace osld {

struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open

  int w() const { return x1 - x0; }
  int h() const { return y1 - y0; }
};

inline Box clamp_box(Box b, int gw, int gh) {
  b.x0 = std::max(0, b.x0);
  b.y0 = std::max(0, b.y0);
  b.x1 = std::min(gw, b.x1);
  b.y1 = std::min(gh, b.y1);
  require(b.w() > 0 && b.h() > 0, "clamp_box: empty region");
  return b;
}

inline Box union_box(const Box& a, const Box& b) {
  return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1),
          std::max(a.y1, b.y1)};
}

inline Box expand_box(const Box& b, int halo) {
  return {b.x0 - halo, b.y0 - halo, b.x1 + halo, b.y1 + halo};
}

// Source cells a x2 upsample reads to produce the given output box:
// output o takes taps floor((o - 0.5) / 2) and that plus one.
inline Box upsample_source_box(const Box& out) {
  const auto lo = [](int o) { return static_cast<int>(std::floor((o - 0.5) / 2.0)); };
  return {lo(out.x0), lo(out.y0), lo(out.x1 - 1) + 2, lo(out.y1 - 1) + 2};
}

template <typename T>
struct RegionMap {
  Tensor<T> t;
  Box box;  // placement in the full level grid
};

// Per-level crop plan of one windowed embedding pass. Levels with index
// >= full_from are computed in full.
struct WindowPlan {
  int levels = 0;
  int full_from = 0;
  std::vector<Box> emb_box;  // consumed embedding cells
  std::vector<Box> fc_box;   // F_c cells to materialize (valid region)
  std::vector<Box> cat_box;  // block input region (fc_box + conv halo)
};

inline WindowPlan make_window_plan(const nn::BankConfig& cfg, int grid_w, int grid_h,
                                   const LandmarkPoint& anchor, int window_px,
                                   int full_from) {
  WindowPlan plan;
  plan.levels = cfg.levels;
  plan.full_from = full_from;
  require(full_from >= 0 && full_from <= cfg.levels, "window plan: bad full_from");
  plan.emb_box.resize(full_from);
  plan.fc_box.resize(full_from);
  plan.cat_box.resize(full_from);
  const int rfb_halo =
      cfg.levels >= 3
          ? *std::max_element(cfg.rfb_dilations.begin(), cfg.rfb_dilations.end())
          : 0;
  for (int i = 0; i < full_from; ++i) {
    const int gw = grid_w >> i, gh = grid_h >> i;
    const auto [cx, cy] = level_cell(anchor, i);
    require(cx >= 0 && cx < gw && cy >= 0 && cy < gh,
            "window plan: anchor outside level " + std::to_string(i + 1));
    plan.emb_box[i] =
        clamp_box({cx - window_px, cy - window_px, cx + window_px + 1, cy + window_px + 1},
                  gw, gh);
    Box need = plan.emb_box[i];
    if (i + 1 >= 3) need = expand_box(need, rfb_halo);  // head reads RFB(F_c)
    if (i > 0) need = union_box(need, upsample_source_box(plan.cat_box[i - 1]));
    plan.fc_box[i] = clamp_box(need, gw, gh);
    plan.cat_box[i] = clamp_box(expand_box(plan.fc_box[i], 1), gw, gh);
  }
  return plan;
}

namespace detail {

// x2 upsample producing out_box cells, reading a source region (src_box
// gives its placement; grid_h/grid_w are the full source dims used for
// edge clamping).
template <typename T>
void upsample2x_crop_forward(const Tensor<T>& src, const Box& src_box, int src_grid_w,
                             int src_grid_h, const Box& out_box, Tensor<T>& out) {
  out = Tensor<T>(src.c, out_box.h(), out_box.w());
  const auto tap = [](int o) { return static_cast<int>(std::floor((o - 0.5) / 2.0)); };
  for (int oy = out_box.y0; oy < out_box.y1; ++oy) {
    const int sy0 = tap(oy);
    const double wy1 = (oy % 2 == 0) ? 0.75 : 0.25;  // weight of tap sy0 + 1
    for (int ox = out_box.x0; ox < out_box.x1; ++ox) {
      const int sx0 = tap(ox);
      const double wx1 = (ox % 2 == 0) ? 0.75 : 0.25;
      int sy[2] = {std::clamp(sy0, 0, src_grid_h - 1), std::clamp(sy0 + 1, 0, src_grid_h - 1)};
      int sx[2] = {std::clamp(sx0, 0, src_grid_w - 1), std::clamp(sx0 + 1, 0, src_grid_w - 1)};
      const double wy[2] = {1.0 - wy1, wy1}, wx[2] = {1.0 - wx1, wx1};
      for (int c = 0; c < src.c; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int ry = sy[dy] - src_box.y0, rx = sx[dx] - src_box.x0;
            require(ry >= 0 && ry < src.h && rx >= 0 && rx < src.w,
                    "upsample2x_crop: source region too small");
            acc += wy[dy] * wx[dx] * static_cast<double>(src.at(c, ry, rx));
          }
        out.at(c, oy - out_box.y0, ox - out_box.x0) = static_cast<T>(acc);
      }
    }
  }
}

template <typename T>
void upsample2x_crop_backward(const Tensor<T>& dout, const Box& out_box, Tensor<T>& dsrc,
                              const Box& src_box, int src_grid_w, int src_grid_h) {
  const auto tap = [](int o) { return static_cast<int>(std::floor((o - 0.5) / 2.0)); };
  for (int oy = out_box.y0; oy < out_box.y1; ++oy) {
    const int sy0 = tap(oy);
    const double wy1 = (oy % 2 == 0) ? 0.75 : 0.25;
    for (int ox = out_box.x0; ox < out_box.x1; ++ox) {
      const int sx0 = tap(ox);
      const double wx1 = (ox % 2 == 0) ? 0.75 : 0.25;
      int sy[2] = {std::clamp(sy0, 0, src_grid_h - 1), std::clamp(sy0 + 1, 0, src_grid_h - 1)};
      int sx[2] = {std::clamp(sx0, 0, src_grid_w - 1), std::clamp(sx0 + 1, 0, src_grid_w - 1)};
      const double wy[2] = {1.0 - wy1, wy1}, wx[2] = {1.0 - wx1, wx1};
      for (int c = 0; c < dout.c; ++c) {
        const double g =
            static_cast<double>(dout.at(c, oy - out_box.y0, ox - out_box.x0));
        if (g == 0.0) continue;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            dsrc.at(c, sy[dy] - src_box.y0, sx[dx] - src_box.x0) +=
                static_cast<T>(wy[dy] * wx[dx] * g);
      }
    }
  }
}

template <typename T>
Tensor<T> crop_tensor(const Tensor<T>& full, const Box& box) {
  Tensor<T> out(full.c, box.h(), box.w());
  for (int c = 0; c < full.c; ++c)
    for (int y = 0; y < box.h(); ++y)
      for (int x = 0; x < box.w(); ++x) out.at(c, y, x) = full.at(c, box.y0 + y, box.x0 + x);
  return out;
}

}  // namespace detail

// One windowed embedding pass, with everything the backward needs.
template <typename T>
struct WindowedEmbedding {
  WindowPlan plan;
  int grid_w = 0, grid_h = 0;  // finest-level dims
  nn::Pyramid<T> backbone;
  // full levels (idx >= plan.full_from)
  std::vector<Tensor<T>> f_c;        // per level; only full levels populated
  std::vector<Tensor<T>> concat_in;  // block inputs of full levels
  std::vector<nn::RFBBlockTrace<T>> rfb_trace;  // full levels with RFB
  std::vector<Tensor<T>> rfb_out;
  std::vector<Tensor<T>> emb;  // full-level embeddings
  // windowed levels (idx < plan.full_from)
  std::vector<RegionMap<T>> cat_crop;
  std::vector<RegionMap<T>> fc_crop;  // valid values on fc_box
  std::vector<nn::RFBBlockTrace<T>> rfb_trace_crop;
  std::vector<RegionMap<T>> rfb_crop;  // valid values on emb_box
  std::vector<RegionMap<T>> emb_crop;  // exactly emb_box
};

// anchor/window_px define the consumed cells per windowed level;
// full_from levels and deeper are computed in full.
template <typename T>
WindowedEmbedding<T> windowed_embed(const nn::Model<T>& model, const Tensor<T>& x, int k,
                                    const LandmarkPoint& anchor, int window_px,
                                    int full_from) {
  const auto& bank = model.bank;
  const int L = bank.cfg.levels;
  WindowedEmbedding<T> we;
  we.grid_w = x.w;
  we.grid_h = x.h;
  we.plan = make_window_plan(bank.cfg, x.w, x.h, anchor, window_px, full_from);
  const int F = full_from;

  model.backbone->forward(x, we.backbone);
  we.f_c.assign(L, Tensor<T>());
  we.concat_in.assign(L, Tensor<T>());
  we.rfb_trace.assign(L, nn::RFBBlockTrace<T>());
  we.rfb_out.assign(L, Tensor<T>());
  we.emb.assign(L, Tensor<T>());
  we.cat_crop.resize(F);
  we.fc_crop.resize(F);
  we.rfb_trace_crop.resize(F);
  we.rfb_crop.resize(F);
  we.emb_crop.resize(F);

  // full part, deepest first
  we.f_c[L - 1] = we.backbone[L - 1];
  for (int idx = L - 2; idx >= F; --idx) {
    Tensor<T> up;
    nn::upsample2x_forward(we.f_c[idx + 1], up);
    const Tensor<T>& skip = we.backbone[idx];
    Tensor<T>& cat = we.concat_in[idx];
    cat = Tensor<T>(up.c + skip.c, up.h, up.w);
    std::copy(up.v.begin(), up.v.end(), cat.v.begin());
    std::copy(skip.v.begin(), skip.v.end(), cat.v.begin() + up.size());
    nn::adapter_conv_forward(bank.blocks[idx], cat, k, we.f_c[idx]);
  }
  for (int idx = std::max(2, F); idx <= L - 1; ++idx)
    nn::rfb_adapter_forward(bank.rfbs[idx - 2], we.f_c[idx], k, we.rfb_out[idx],
                            &we.rfb_trace[idx]);
  for (int idx = F; idx <= L - 1; ++idx) {
    const Tensor<T>& in = idx <= 1 ? we.f_c[idx] : we.rfb_out[idx];
    we.emb[idx] = Tensor<T>(bank.cfg.embed_dim, in.h, in.w);
    nn::conv_forward(bank.heads[idx], in, we.emb[idx].v.data(), in.h, in.w);
  }

  // windowed part, deepest crop first
  for (int idx = F - 1; idx >= 0; --idx) {
    const Box& cbox = we.plan.cat_box[idx];
    const Box& fbox = we.plan.fc_box[idx];
    const Box& ebox = we.plan.emb_box[idx];
    const int src_gw = we.grid_w >> (idx + 1), src_gh = we.grid_h >> (idx + 1);
    Tensor<T> up;
    if (idx + 1 >= F) {
      detail::upsample2x_crop_forward(we.f_c[idx + 1], Box{0, 0, src_gw, src_gh}, src_gw,
                                      src_gh, cbox, up);
    } else {
      detail::upsample2x_crop_forward(we.fc_crop[idx + 1].t, we.fc_crop[idx + 1].box,
                                      src_gw, src_gh, cbox, up);
    }
    const Tensor<T> skip = detail::crop_tensor(we.backbone[idx], cbox);
    RegionMap<T>& cat = we.cat_crop[idx];
    cat.box = cbox;
    cat.t = Tensor<T>(up.c + skip.c, cbox.h(), cbox.w());
    std::copy(up.v.begin(), up.v.end(), cat.t.v.begin());
    std::copy(skip.v.begin(), skip.v.end(), cat.t.v.begin() + up.size());

    // pad-1 conv over the crop: cells in fc_box have their full support
    // inside the crop (or in true zero padding at grid edges)
    Tensor<T> fc_cat_sized;
    nn::adapter_conv_forward(bank.blocks[idx], cat.t, k, fc_cat_sized);
    we.fc_crop[idx].box = fbox;
    we.fc_crop[idx].t = detail::crop_tensor(
        fc_cat_sized, Box{fbox.x0 - cbox.x0, fbox.y0 - cbox.y0, fbox.x1 - cbox.x0,
                          fbox.y1 - cbox.y0});

    const Tensor<T>* head_in = &we.fc_crop[idx].t;
    Box head_in_box = fbox;
    if (idx >= 2) {
      nn::rfb_adapter_forward(bank.rfbs[idx - 2], we.fc_crop[idx].t, k, we.rfb_crop[idx].t,
                              &we.rfb_trace_crop[idx]);
      we.rfb_crop[idx].box = fbox;
      head_in = &we.rfb_crop[idx].t;
      head_in_box = fbox;
    }
    const Tensor<T> head_slice = detail::crop_tensor(
        *head_in, Box{ebox.x0 - head_in_box.x0, ebox.y0 - head_in_box.y0,
                      ebox.x1 - head_in_box.x0, ebox.y1 - head_in_box.y0});
    we.emb_crop[idx].box = ebox;
    we.emb_crop[idx].t = Tensor<T>(bank.cfg.embed_dim, ebox.h(), ebox.w());
    nn::conv_forward(bank.heads[idx], head_slice, we.emb_crop[idx].t.v.data(), ebox.h(),
                     ebox.w());
  }
  return we;
}

// Backward through a windowed pass. d_emb_full covers full levels (same
// shapes as we.emb), d_emb_crop the windowed ones (shapes of emb_crop).
// Parameter gradients accumulate into the bank.
template <typename T>
void windowed_backward(nn::AdapterBank<T>& bank, const WindowedEmbedding<T>& we,
                       const std::vector<Tensor<T>>& d_emb_full,
                       const std::vector<Tensor<T>>& d_emb_crop, int k) {
  const int L = bank.cfg.levels;
  const int F = we.plan.full_from;

  std::vector<Tensor<T>> dfc(L);
  for (int idx = F; idx <= L - 1; ++idx)
    dfc[idx] = Tensor<T>(we.f_c[idx].c, we.f_c[idx].h, we.f_c[idx].w);
  std::vector<Tensor<T>> dfc_crop(F);
  for (int idx = 0; idx < F; ++idx)
    dfc_crop[idx] =
        Tensor<T>(we.fc_crop[idx].t.c, we.fc_crop[idx].t.h, we.fc_crop[idx].t.w);

  // full heads / RFB
  for (int idx = F; idx <= L - 1; ++idx) {
    if (idx <= 1) {
      nn::conv_backward(bank.heads[idx], we.f_c[idx], d_emb_full[idx].v.data(),
                        d_emb_full[idx].h, d_emb_full[idx].w, &dfc[idx]);
    } else {
      Tensor<T> drfb(we.rfb_out[idx].c, we.rfb_out[idx].h, we.rfb_out[idx].w);
      nn::conv_backward(bank.heads[idx], we.rfb_out[idx], d_emb_full[idx].v.data(),
                        d_emb_full[idx].h, d_emb_full[idx].w, &drfb);
      nn::rfb_adapter_backward(bank.rfbs[idx - 2], we.f_c[idx], we.rfb_trace[idx], drfb, k,
                               &dfc[idx]);
    }
  }
  // windowed heads / RFB
  for (int idx = 0; idx < F; ++idx) {
    const Box& fbox = we.plan.fc_box[idx];
    const Box& ebox = we.plan.emb_box[idx];
    const Box rel{ebox.x0 - fbox.x0, ebox.y0 - fbox.y0, ebox.x1 - fbox.x0,
                  ebox.y1 - fbox.y0};
    if (idx <= 1) {
      const Tensor<T> head_in = detail::crop_tensor(we.fc_crop[idx].t, rel);
      Tensor<T> dslice(head_in.c, head_in.h, head_in.w);
      nn::conv_backward(bank.heads[idx], head_in, d_emb_crop[idx].v.data(),
                        d_emb_crop[idx].h, d_emb_crop[idx].w, &dslice);
      for (int c = 0; c < dslice.c; ++c)
        for (int y = 0; y < dslice.h; ++y)
          for (int x = 0; x < dslice.w; ++x)
            dfc_crop[idx].at(c, rel.y0 + y, rel.x0 + x) += dslice.at(c, y, x);
    } else {
      const Tensor<T> head_in = detail::crop_tensor(we.rfb_crop[idx].t, rel);
      Tensor<T> dslice(head_in.c, head_in.h, head_in.w);
      nn::conv_backward(bank.heads[idx], head_in, d_emb_crop[idx].v.data(),
                        d_emb_crop[idx].h, d_emb_crop[idx].w, &dslice);
      Tensor<T> drfb(we.rfb_crop[idx].t.c, we.rfb_crop[idx].t.h, we.rfb_crop[idx].t.w);
      for (int c = 0; c < dslice.c; ++c)
        for (int y = 0; y < dslice.h; ++y)
          for (int x = 0; x < dslice.w; ++x)
            drfb.at(c, rel.y0 + y, rel.x0 + x) = dslice.at(c, y, x);
      nn::rfb_adapter_backward(bank.rfbs[idx - 2], we.fc_crop[idx].t, we.rfb_trace_crop[idx],
                               drfb, k, &dfc_crop[idx]);
    }
  }

  // windowed chain, finest first
  for (int idx = 0; idx < F; ++idx) {
    const Box& cbox = we.plan.cat_box[idx];
    const Box& fbox = we.plan.fc_box[idx];
    // assemble cat-sized masked dy
    Tensor<T> dy(we.fc_crop[idx].t.c, cbox.h(), cbox.w());
    for (int c = 0; c < dy.c; ++c)
      for (int y = 0; y < fbox.h(); ++y)
        for (int x = 0; x < fbox.w(); ++x) {
          const T gv = dfc_crop[idx].at(c, y, x);
          const T fv = we.fc_crop[idx].t.at(c, y, x);
          dy.at(c, fbox.y0 - cbox.y0 + y, fbox.x0 - cbox.x0 + x) = fv > T(0) ? gv : T(0);
        }
    Tensor<T> dcat(we.cat_crop[idx].t.c, cbox.h(), cbox.w());
    auto& blk = bank.blocks[idx];
    nn::conv_backward(blk.shared, we.cat_crop[idx].t, dy.v.data(), dy.h, dy.w, &dcat);
    if (blk.adapter_channels() > 0)
      nn::conv_backward(blk.adapters[k], we.cat_crop[idx].t,
                        dy.v.data() + blk.shared.out_c * dy.plane_size(), dy.h, dy.w,
                        &dcat);
    // up-part of the concat flows into F_c of the coarser level
    const int up_c = idx + 1 >= F ? we.f_c[idx + 1].c : we.fc_crop[idx + 1].t.c;
    Tensor<T> dup(up_c, cbox.h(), cbox.w());
    std::copy(dcat.v.begin(), dcat.v.begin() + dup.size(), dup.v.begin());
    const int src_gw = we.grid_w >> (idx + 1), src_gh = we.grid_h >> (idx + 1);
    if (idx + 1 >= F)
      detail::upsample2x_crop_backward(dup, cbox, dfc[idx + 1], Box{0, 0, src_gw, src_gh},
                                       src_gw, src_gh);
    else
      detail::upsample2x_crop_backward(dup, cbox, dfc_crop[idx + 1],
                                       we.fc_crop[idx + 1].box, src_gw, src_gh);
  }

  // full blocks, ascending
  for (int idx = std::max(0, F); idx <= L - 2; ++idx) {
    const Tensor<T>& cat = we.concat_in[idx];
    Tensor<T> dcat(cat.c, cat.h, cat.w);
    nn::adapter_conv_backward(bank.blocks[idx], cat, we.f_c[idx], dfc[idx], k, &dcat);
    const int up_c = we.f_c[idx + 1].c;
    Tensor<T> dup(up_c, dcat.h, dcat.w);
    std::copy(dcat.v.begin(), dcat.v.begin() + dup.size(), dup.v.begin());
    nn::upsample2x_backward(dup, dfc[idx + 1]);
  }
}

// Windowed equivalent of sample_loss: same loss and gradients as the full
// path up to floating-point association, at a fraction of the compute.
template <typename T>
double windowed_sample_loss(nn::Model<T>& model, const Tensor<T>& query,
                            const Patch<T>& patch, const LandmarkPoint& target, int k,
                            const CascadeConfig& cfg, bool backward,
                            double grad_scale = 1.0) {
  cfg.validate();
  const int L = model.bank.cfg.levels;
  const int qF = std::max(0, L - 2);  // two coarsest query levels: global softmax
  const int pF = std::max(0, L - 1);  // patches are consumed at center cells only

  auto q = windowed_embed(model, query, k, target, cfg.window_px, qF);
  auto p = windowed_embed(model, patch.pixels, k, patch.center_in_patch, 0, pF);

  // raw center vectors from the patch pass
  std::vector<std::vector<T>> raw(L);
  CenterEmbeddings<T> centers;
  centers.vecs.resize(L);
  centers.flagged.assign(L, false);
  for (int idx = 0; idx < L; ++idx) {
    const auto [cx, cy] = level_cell(patch.center_in_patch, idx);
    raw[idx].resize(model.bank.cfg.embed_dim);
    if (idx < pF) {
      const auto& crop = p.emb_crop[idx];
      for (int c = 0; c < crop.t.c; ++c)
        raw[idx][c] = crop.t.at(c, cy - crop.box.y0, cx - crop.box.x0);
    } else {
      for (int c = 0; c < p.emb[idx].c; ++c) raw[idx][c] = p.emb[idx].at(c, cy, cx);
    }
    double norm2 = 0.0;
    for (T v : raw[idx]) norm2 += static_cast<double>(v) * v;
    const double norm = std::sqrt(norm2);
    if (norm < kZeroNormEps) {
      centers.flagged[idx] = true;
      centers.vecs[idx].assign(raw[idx].size(), T(0));
    } else {
      centers.vecs[idx] = raw[idx];
      for (auto& v : centers.vecs[idx]) v = static_cast<T>(v / norm);
    }
  }

  // per-level similarity + cross entropy
  double total = 0.0;
  std::vector<Tensor<T>> dsim(L);
  for (int idx = 0; idx < L; ++idx) {
    if (centers.flagged[idx]) continue;
    const auto [tx, ty] = level_cell(target, idx);
    if (idx < qF) {
      const auto& crop = q.emb_crop[idx];
      const Tensor<T> sim = cosine_map(crop.t, centers.vecs[idx]);
      total += softmax_ce(sim, tx - crop.box.x0, ty - crop.box.y0, cfg.tau,
                          backward ? &dsim[idx] : nullptr);
    } else {
      const Tensor<T> sim = cosine_map(q.emb[idx], centers.vecs[idx]);
      require(tx >= 0 && tx < sim.w && ty >= 0 && ty < sim.h,
              "windowed_sample_loss: target outside level " + std::to_string(idx + 1));
      total += softmax_ce(sim, tx, ty, cfg.tau, backward ? &dsim[idx] : nullptr);
    }
  }
  if (!backward) return total;

  if (grad_scale != 1.0)
    for (auto& g : dsim)
      for (auto& x : g.v) x = static_cast<T>(x * grad_scale);

  std::vector<Tensor<T>> dq_full(L), dq_crop(L), dp_full(L), dp_crop(L);
  std::vector<std::vector<T>> dcenter(L);
  for (int idx = 0; idx < L; ++idx) {
    dcenter[idx].assign(model.bank.cfg.embed_dim, T(0));
    if (idx < qF)
      dq_crop[idx] = Tensor<T>(q.emb_crop[idx].t.c, q.emb_crop[idx].t.h, q.emb_crop[idx].t.w);
    else
      dq_full[idx] = Tensor<T>(q.emb[idx].c, q.emb[idx].h, q.emb[idx].w);
    if (idx < pF)
      dp_crop[idx] = Tensor<T>(p.emb_crop[idx].t.c, p.emb_crop[idx].t.h, p.emb_crop[idx].t.w);
    else
      dp_full[idx] = Tensor<T>(p.emb[idx].c, p.emb[idx].h, p.emb[idx].w);
    if (centers.flagged[idx]) continue;
    if (idx < qF)
      cosine_map_backward(q.emb_crop[idx].t, centers.vecs[idx], dsim[idx], dq_crop[idx],
                          dcenter[idx]);
    else
      cosine_map_backward(q.emb[idx], centers.vecs[idx], dsim[idx], dq_full[idx],
                          dcenter[idx]);
    const auto draw = normalize_backward(raw[idx], dcenter[idx]);
    const auto [cx, cy] = level_cell(patch.center_in_patch, idx);
    if (idx < pF) {
      const Box& b = p.emb_crop[idx].box;
      for (int c = 0; c < dp_crop[idx].c; ++c)
        dp_crop[idx].at(c, cy - b.y0, cx - b.x0) = draw[c];
    } else {
      for (int c = 0; c < dp_full[idx].c; ++c) dp_full[idx].at(c, cy, cx) = draw[c];
    }
  }
  windowed_backward(model.bank, q, dq_full, dq_crop, k);
  windowed_backward(model.bank, p, dp_full, dp_crop, k);
  return total;
}

}  // namespace osld
