#pragma once

// Test-only embedding oracles. They bypass the network entirely and emit
// positional codes relative to the true landmark location, so inference
// plumbing can be verified with zero appearance ambiguity.

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "osld/trainer.hpp"

namespace osld::testing {

// Positional code with a strict, unique cosine peak at zero displacement:
// for each frequency m, [cos(w dx), sin(w dx), cos(w dy), sin(w dy)] with
// w = 2 pi m / period. Cosine similarity between codes depends only on
// the displacement and is maximal exactly at zero.
template <typename T>
std::vector<T> fourier_code(double dx, double dy, int period) {
  static const int kFreqs[] = {1, 2, 3, 5, 7};
  std::vector<T> v;
  v.reserve(4 * std::size(kFreqs));
  for (int m : kFreqs) {
    const double w = 2.0 * M_PI * m / period;
    v.push_back(static_cast<T>(std::cos(w * dx)));
    v.push_back(static_cast<T>(std::sin(w * dx)));
    v.push_back(static_cast<T>(std::cos(w * dy)));
    v.push_back(static_cast<T>(std::sin(w * dy)));
  }
  return v;
}

constexpr int kFourierDim = 20;

// Knows every image's true landmark locations (resized frame). Query
// pixels carry the code of their displacement from the truth; patch
// centers carry the zero code, so similarity peaks exactly at the truth.
template <typename T>
class FourierOracleEmbedder : public Embedder<T> {
 public:
  FourierOracleEmbedder(std::map<std::pair<std::string, int>, LandmarkPoint> gt,
                        int levels, int period)
      : gt_(std::move(gt)), levels_(levels), period_(period) {}

  nn::Pyramid<T> embed_query(const ImageRecord<T>& rec, int k) const override {
    auto it = gt_.find({rec.id, k});
    require(it != gt_.end(), "oracle: no ground truth for " + rec.id);
    nn::Pyramid<T> pyr(levels_);
    for (int i = 0; i < levels_; ++i) {
      const int h = rec.resized.h >> i, w = rec.resized.w >> i;
      const auto [gx, gy] = level_cell(it->second, i);
      pyr[i] = Tensor<T>(kFourierDim, h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const auto code = fourier_code<T>(x - gx, y - gy, period_);
          for (int c = 0; c < kFourierDim; ++c) pyr[i].at(c, y, x) = code[c];
        }
    }
    return pyr;
  }

  CenterEmbeddings<T> embed_patch_centers(const Patch<T>&, int) const override {
    CenterEmbeddings<T> centers;
    centers.vecs.assign(levels_, {});
    centers.flagged.assign(levels_, false);
    auto code = fourier_code<T>(0, 0, period_);
    double norm = 0.0;
    for (T v : code) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    for (auto& v : code) v = static_cast<T>(v / norm);
    for (int i = 0; i < levels_; ++i) centers.vecs[i] = code;
    return centers;
  }

 private:
  std::map<std::pair<std::string, int>, LandmarkPoint> gt_;
  int levels_;
  int period_;
};

template <typename T>
FourierOracleEmbedder<T> make_oracle(const DatasetSplit<T>& data, int levels) {
  std::map<std::pair<std::string, int>, LandmarkPoint> gt;
  auto add = [&](const ImageRecord<T>& rec) {
    for (int k = 0; k < data.num_landmarks; ++k) gt[{rec.id, k}] = gt_resized(rec, k);
  };
  for (const auto& rec : data.train) add(rec);
  for (const auto& rec : data.test) add(rec);
  return FourierOracleEmbedder<T>(std::move(gt), levels,
                                  4 * data.train.front().resized.w);
}

// Constant embedding everywhere: every similarity map is uniform, which
// exposes tie-break and clamp behavior.
template <typename T>
class UniformEmbedder : public Embedder<T> {
 public:
  explicit UniformEmbedder(int levels) : levels_(levels) {}

  nn::Pyramid<T> embed_query(const ImageRecord<T>& rec, int) const override {
    nn::Pyramid<T> pyr(levels_);
    for (int i = 0; i < levels_; ++i) {
      pyr[i] = Tensor<T>(4, rec.resized.h >> i, rec.resized.w >> i);
      pyr[i].fill(T(0.5));
    }
    return pyr;
  }

  CenterEmbeddings<T> embed_patch_centers(const Patch<T>&, int) const override {
    CenterEmbeddings<T> centers;
    centers.vecs.assign(levels_, std::vector<T>(4, T(0.5)));
    centers.flagged.assign(levels_, false);
    return centers;
  }

 private:
  int levels_;
};

}  // namespace osld::testing
