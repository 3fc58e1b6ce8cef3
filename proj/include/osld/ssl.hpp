#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "osld/augment.hpp"
#include "osld/geometry.hpp"
#include "osld/nn/model.hpp"

namespace osld {

struct CascadeConfig {
  int window_px = 4;   // half-width of the fine-level search window
  double tau = 0.07;   // softmax temperature

  void validate() const {
    if (window_px < 1) throw config_error("ssl.window_px must be >= 1");
    if (tau <= 0.0) throw config_error("ssl.tau must be positive");
  }
};

// Per-level cosine-similarity maps between a query image and one set of
// template-patch center embeddings. target is only set during training.
template <typename T>
struct SimilarityStack {
  std::vector<Tensor<T>> maps;  // one single-channel map per level
  std::vector<bool> flagged;    // level had a degenerate center embedding
  std::optional<LandmarkPoint> target;  // resized frame
};

template <typename T>
struct CenterEmbeddings {
  std::vector<std::vector<T>> vecs;  // L2-normalized, or all-zero when flagged
  std::vector<bool> flagged;
};

constexpr double kZeroNormEps = 1e-12;

// Embedding-grid cell of a resized/patch-frame point at pyramid level
// `idx` (0-based): plain floor division by the level stride.
inline std::pair<int, int> level_cell(const LandmarkPoint& p, int idx) {
  const int stride = 1 << idx;
  return {static_cast<int>(std::floor(p.x / stride)),
          static_cast<int>(std::floor(p.y / stride))};
}

template <typename T>
CenterEmbeddings<T> center_embeddings_from_pyramid(const nn::Pyramid<T>& pyr,
                                                   const LandmarkPoint& center) {
  CenterEmbeddings<T> out;
  out.vecs.resize(pyr.size());
  out.flagged.assign(pyr.size(), false);
  for (std::size_t i = 0; i < pyr.size(); ++i) {
    const auto [cx, cy] = level_cell(center, static_cast<int>(i));
    const auto& map = pyr[i];
    require(cx >= 0 && cx < map.w && cy >= 0 && cy < map.h,
            "center_embeddings: center outside level " + std::to_string(i + 1));
    std::vector<T> v(map.c);
    double norm2 = 0.0;
    for (int c = 0; c < map.c; ++c) {
      v[c] = map.at(c, cy, cx);
      norm2 += static_cast<double>(v[c]) * v[c];
    }
    const double norm = std::sqrt(norm2);
    if (norm < kZeroNormEps) {
      std::fill(v.begin(), v.end(), T(0));
      out.flagged[i] = true;
    } else {
      for (auto& x : v) x = static_cast<T>(x / norm);
    }
    out.vecs[i] = std::move(v);
  }
  return out;
}

// Decoder forward on the patch, then the per-level embedding at the cell
// holding center_in_patch, L2-normalized.
template <typename T>
CenterEmbeddings<T> patch_center_embeddings(const nn::Model<T>& model, const Patch<T>& patch,
                                            int k) {
  const int div = 1 << (model.bank.cfg.levels - 1);
  require(patch.pixels.h % div == 0 && patch.pixels.w % div == 0,
          "patch_center_embeddings: patch size not divisible by " + std::to_string(div));
  const auto pyr = nn::embed_image(model, patch.pixels, k);
  return center_embeddings_from_pyramid(pyr, patch.center_in_patch);
}

// Cosine of each pixel embedding against a unit center vector; zero
// embeddings give similarity 0.
template <typename T>
Tensor<T> cosine_map(const Tensor<T>& emb, const std::vector<T>& center) {
  require(static_cast<int>(center.size()) == emb.c, "cosine_map: dimension mismatch");
  Tensor<T> map(1, emb.h, emb.w);
  const T* cvec = center.data();
  const std::size_t plane = emb.plane_size();
  for (std::size_t p = 0; p < plane; ++p) {
    double dot = 0.0, norm2 = 0.0;
    for (int c = 0; c < emb.c; ++c) {
      const double x = emb.v[c * plane + p];
      dot += x * cvec[c];
      norm2 += x * x;
    }
    const double norm = std::sqrt(norm2);
    map.v[p] = norm < kZeroNormEps ? T(0) : static_cast<T>(dot / norm);
  }
  return map;
}

// d similarity -> d embeddings (accumulated) and d center (normalized
// space, accumulated).
template <typename T>
void cosine_map_backward(const Tensor<T>& emb, const std::vector<T>& center,
                         const Tensor<T>& dsim, Tensor<T>& demb, std::vector<T>& dcenter) {
  const T* cvec = center.data();
  const std::size_t plane = emb.plane_size();
  for (std::size_t p = 0; p < plane; ++p) {
    const double ds = dsim.v[p];
    if (ds == 0.0) continue;
    double norm2 = 0.0, dot = 0.0;
    for (int c = 0; c < emb.c; ++c) {
      const double x = emb.v[c * plane + p];
      norm2 += x * x;
      dot += x * cvec[c];
    }
    const double norm = std::sqrt(norm2);
    if (norm < kZeroNormEps) continue;
    const double s = dot / norm;
    for (int c = 0; c < emb.c; ++c) {
      const double qhat = emb.v[c * plane + p] / norm;
      demb.v[c * plane + p] += static_cast<T>(ds * (cvec[c] - s * qhat) / norm);
      dcenter[c] += static_cast<T>(ds * qhat);
    }
  }
}

// Cross-entropy of softmax(map / tau) against the target cell, optional
// gradient into *dmap (accumulated nowhere, plain write).
template <typename T>
double softmax_ce(const Tensor<T>& map, int tx, int ty, double tau, Tensor<T>* dmap) {
  require(tx >= 0 && tx < map.w && ty >= 0 && ty < map.h, "softmax_ce: target outside map");
  double maxv = -1e300;
  for (std::size_t p = 0; p < map.plane_size(); ++p)
    maxv = std::max(maxv, static_cast<double>(map.v[p]) / tau);
  double z = 0.0;
  for (std::size_t p = 0; p < map.plane_size(); ++p)
    z += std::exp(static_cast<double>(map.v[p]) / tau - maxv);
  const double target_logit = static_cast<double>(map.at(0, ty, tx)) / tau - maxv;
  if (dmap) {
    *dmap = Tensor<T>(1, map.h, map.w);
    for (std::size_t p = 0; p < map.plane_size(); ++p) {
      const double prob = std::exp(static_cast<double>(map.v[p]) / tau - maxv) / z;
      dmap->v[p] = static_cast<T>(prob / tau);
    }
    dmap->at(0, ty, tx) -= static_cast<T>(1.0 / tau);
  }
  return std::log(z) - target_logit;
}

// Cosine similarity of every query-pixel embedding against the center
// vector of its level. Zero embeddings (either side) give similarity 0.
template <typename T>
SimilarityStack<T> similarity_maps(const nn::Pyramid<T>& query,
                                   const CenterEmbeddings<T>& centers) {
  require(query.size() == centers.vecs.size(), "similarity_maps: level count mismatch");
  SimilarityStack<T> stack;
  stack.maps.resize(query.size());
  stack.flagged = centers.flagged;
  for (std::size_t i = 0; i < query.size(); ++i) {
    const auto& q = query[i];
    require(static_cast<int>(centers.vecs[i].size()) == q.c,
            "similarity_maps: embedding dimension mismatch");
    if (centers.flagged[i]) {
      stack.maps[i] = Tensor<T>(1, q.h, q.w);  // all-zero by convention
      continue;
    }
    stack.maps[i] = cosine_map(q, centers.vecs[i]);
  }
  return stack;
}

namespace detail {

struct LevelWindow {
  int x0, y0, x1, y1;  // inclusive bounds
};

// Softmax support at one level: the full map at the two coarsest levels,
// a (2*window+1)^2 window centered on the cell at finer levels, clipped
// to the map extent.
template <typename T>
LevelWindow loss_window(const Tensor<T>& map, int idx, int levels, int cx, int cy,
                        int window_px) {
  if (idx >= levels - 2) return {0, 0, map.w - 1, map.h - 1};
  LevelWindow w;
  w.x0 = std::max(0, cx - window_px);
  w.y0 = std::max(0, cy - window_px);
  w.x1 = std::min(map.w - 1, cx + window_px);
  w.y1 = std::min(map.h - 1, cy + window_px);
  return w;
}

}  // namespace detail

// Sum over levels of the cross-entropy of softmax(map / tau) against the
// one-hot downscaled target cell. Levels with a flagged center are
// skipped. When grad != nullptr it receives d loss / d map per level.
template <typename T>
double ssl_training_loss(const SimilarityStack<T>& stack, const CascadeConfig& cfg,
                         std::vector<Tensor<T>>* grad = nullptr) {
  cfg.validate();
  require(stack.target.has_value(), "ssl_training_loss: stack has no target");
  const int levels = static_cast<int>(stack.maps.size());
  if (grad) {
    grad->assign(levels, Tensor<T>());
    for (int i = 0; i < levels; ++i)
      (*grad)[i] = Tensor<T>(1, stack.maps[i].h, stack.maps[i].w);
  }
  double total = 0.0;
  for (int i = 0; i < levels; ++i) {
    if (stack.flagged.size() > static_cast<std::size_t>(i) && stack.flagged[i]) continue;
    const auto& map = stack.maps[i];
    const auto [cx, cy] = level_cell(*stack.target, i);
    require(cx >= 0 && cx < map.w && cy >= 0 && cy < map.h,
            "ssl_training_loss: target outside level " + std::to_string(i + 1));
    const auto w = detail::loss_window(map, i, levels, cx, cy, cfg.window_px);
    double maxv = -1e300;
    for (int y = w.y0; y <= w.y1; ++y)
      for (int x = w.x0; x <= w.x1; ++x)
        maxv = std::max(maxv, static_cast<double>(map.at(0, y, x)) / cfg.tau);
    double z = 0.0;
    for (int y = w.y0; y <= w.y1; ++y)
      for (int x = w.x0; x <= w.x1; ++x)
        z += std::exp(static_cast<double>(map.at(0, y, x)) / cfg.tau - maxv);
    const double target_logit = static_cast<double>(map.at(0, cy, cx)) / cfg.tau - maxv;
    total += std::log(z) - target_logit;
    if (grad) {
      auto& g = (*grad)[i];
      for (int y = w.y0; y <= w.y1; ++y)
        for (int x = w.x0; x <= w.x1; ++x) {
          const double p =
              std::exp(static_cast<double>(map.at(0, y, x)) / cfg.tau - maxv) / z;
          const double onehot = (x == cx && y == cy) ? 1.0 : 0.0;
          g.at(0, y, x) = static_cast<T>((p - onehot) / cfg.tau);
        }
    }
  }
  return total;
}

// Coarse-to-fine argmax: free argmax at the deepest level, then a
// (2*window+1)^2 window around the doubled estimate at each finer level.
// Ties break row-major-first. Returns finest-grid (= resized-frame) pixels.
template <typename T>
LandmarkPoint cascade_infer(const SimilarityStack<T>& stack, const CascadeConfig& cfg) {
  cfg.validate();
  require(!stack.maps.empty(), "cascade_infer: empty stack");
  const int levels = static_cast<int>(stack.maps.size());
  auto [bx, by] = argmax_xy(stack.maps[levels - 1]);
  for (int i = levels - 2; i >= 0; --i) {
    const auto& map = stack.maps[i];
    const int cx = bx * 2, cy = by * 2;
    const int x0 = std::max(0, cx - cfg.window_px), x1 = std::min(map.w - 1, cx + cfg.window_px);
    const int y0 = std::max(0, cy - cfg.window_px), y1 = std::min(map.h - 1, cy + cfg.window_px);
    int best_x = x0, best_y = y0;
    T best = map.at(0, y0, x0);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (map.at(0, y, x) > best) {
          best = map.at(0, y, x);
          best_x = x;
          best_y = y;
        }
    bx = best_x;
    by = best_y;
  }
  return {static_cast<double>(bx), static_cast<double>(by), Frame::resized};
}

// d similarity -> d query embeddings (accumulated into dquery, which is
// allocated here) and d center vectors in normalized space.
template <typename T>
void similarity_backward(const nn::Pyramid<T>& query, const CenterEmbeddings<T>& centers,
                         const std::vector<Tensor<T>>& dmaps, nn::Pyramid<T>& dquery,
                         std::vector<std::vector<T>>& dcenters) {
  dquery.assign(query.size(), Tensor<T>());
  dcenters.assign(query.size(), {});
  for (std::size_t i = 0; i < query.size(); ++i) {
    const auto& q = query[i];
    dquery[i] = Tensor<T>(q.c, q.h, q.w);
    dcenters[i].assign(q.c, T(0));
    if (centers.flagged[i]) continue;
    cosine_map_backward(q, centers.vecs[i], dmaps[i], dquery[i], dcenters[i]);
  }
}

// Backward through v_hat = v / |v|. Returns d loss / d raw vector.
template <typename T>
std::vector<T> normalize_backward(const std::vector<T>& raw, const std::vector<T>& d_hat) {
  double norm2 = 0.0;
  for (T x : raw) norm2 += static_cast<double>(x) * x;
  const double norm = std::sqrt(norm2);
  std::vector<T> out(raw.size(), T(0));
  if (norm < kZeroNormEps) return out;
  double dot = 0.0;  // v_hat . d_hat
  for (std::size_t i = 0; i < raw.size(); ++i)
    dot += static_cast<double>(raw[i]) / norm * d_hat[i];
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double vhat = raw[i] / norm;
    out[i] = static_cast<T>((static_cast<double>(d_hat[i]) - dot * vhat) / norm);
  }
  return out;
}

}  // namespace osld
