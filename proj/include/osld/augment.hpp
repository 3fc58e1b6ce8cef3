#pragma once

#include <string>
#include <utility>
#include <vector>

#include "osld/dataset.hpp"
#include "osld/geometry.hpp"
#include "osld/rng.hpp"
#include "osld/tensor.hpp"
#include "osld/warp.hpp"

namespace osld {

struct Range {
  double lo = 0.0, hi = 0.0;
  void validate(const char* what) const {
    require(lo <= hi, std::string(what) + ": range min > max");
  }
};

struct AffineAugParams {
  Range shift_px{-10.0, 10.0};
  Range rotation_deg{-15.0, 15.0};
  Range scale{0.9, 1.1};
  Range brightness{-0.15, 0.15};  // patch photometric jitter only
  Range contrast{0.85, 1.15};

  void validate() const {
    shift_px.validate("aug.shift_px");
    rotation_deg.validate("aug.rotation_deg");
    scale.validate("aug.scale");
    brightness.validate("aug.brightness");
    contrast.validate("aug.contrast");
    require(scale.lo > 0.0, "aug.scale: must be positive");
  }

  bool is_identity_affine() const {
    return shift_px.lo == 0 && shift_px.hi == 0 && rotation_deg.lo == 0 &&
           rotation_deg.hi == 0 && scale.lo == 1.0 && scale.hi == 1.0;
  }
};

// A crop around a tracked point. center_in_patch is the exact location of
// center_in_source after cropping and any augmentation applied since.
template <typename T>
struct Patch {
  Tensor<T> pixels;  // 1 x P x P
  std::string source_image_id;
  LandmarkPoint center_in_source;  // resized frame
  LandmarkPoint center_in_patch;   // patch frame
};

template <typename T>
struct TemplateItem {
  Tensor<T> image;                       // 1 x S x S
  std::vector<LandmarkPoint> landmarks;  // resized frame, one per landmark id
};

template <typename T>
struct TemplateSet {
  std::vector<TemplateItem<T>> items;
  std::size_t size() const { return items.size(); }
};

// Axis-aligned crop of patch_size pixels anchored at round(center).
// Never clamps: a violated margin is a caller bug.
template <typename T>
Patch<T> crop_patch(const Tensor<T>& image, const std::string& image_id,
                    const LandmarkPoint& center, int patch_size) {
  require(patch_size > 0 && patch_size % 2 == 0, "crop_patch: patch size must be even");
  require(image.c == 1, "crop_patch: grayscale image expected");
  const int half = patch_size / 2;
  const long cx = std::lround(center.x), cy = std::lround(center.y);
  require(cx >= half && cx + half <= image.w && cy >= half && cy + half <= image.h,
          "crop_patch: center (" + std::to_string(center.x) + ", " + std::to_string(center.y) +
              ") violates the margin of " + std::to_string(half) + " px");
  Patch<T> p;
  p.pixels = Tensor<T>(1, patch_size, patch_size);
  const int ox = static_cast<int>(cx) - half, oy = static_cast<int>(cy) - half;
  for (int y = 0; y < patch_size; ++y)
    for (int x = 0; x < patch_size; ++x) p.pixels.at(0, y, x) = image.at(0, oy + y, ox + x);
  p.source_image_id = image_id;
  p.center_in_source = center;
  p.center_in_patch = {center.x - ox, center.y - oy, Frame::patch};
  return p;
}

inline Affine2 draw_affine(const AffineAugParams& params, double cx, double cy, Rng& rng) {
  const double sx = rng.uniform(params.shift_px.lo, params.shift_px.hi);
  const double sy = rng.uniform(params.shift_px.lo, params.shift_px.hi);
  const double rot = rng.uniform(params.rotation_deg.lo, params.rotation_deg.hi);
  const double sc = rng.uniform(params.scale.lo, params.scale.hi);
  return make_augment_affine(cx, cy, sx, sy, rot, sc);
}

// n random affines of the resized template with landmarks mapped through
// the same matrix. Items whose landmarks leave the croppable region are
// redrawn and do not reduce n.
template <typename T>
TemplateSet<T> build_augmented_template_set(const ImageRecord<T>& tpl,
                                            const AffineAugParams& params, int n,
                                            int patch_size, std::uint64_t seed) {
  require(tpl.ground_truth.has_value(),
          "build_augmented_template_set: template has no ground truth");
  require(n >= 1, "build_augmented_template_set: n must be >= 1");
  params.validate();
  const Tensor<T>& img = tpl.resized;
  const CroppableRegion region = croppable_region(img.w, patch_size);

  std::vector<LandmarkPoint> gt;
  for (std::size_t k = 0; k < tpl.ground_truth->size(); ++k)
    gt.push_back(gt_resized(tpl, static_cast<int>(k)));

  const double cx = (img.w - 1) / 2.0, cy = (img.h - 1) / 2.0;
  const bool identity = params.is_identity_affine();

  Rng rng(seed);
  TemplateSet<T> out;
  out.items.reserve(n);
  for (int i = 0; i < n; ++i) {
    int attempts = 0;
    for (;;) {
      const Affine2 m = draw_affine(params, cx, cy, rng);
      std::vector<LandmarkPoint> mapped;
      mapped.reserve(gt.size());
      bool ok = true;
      for (const auto& p : gt) {
        LandmarkPoint q = m.apply(p);
        ok = ok && region.contains(q);
        mapped.push_back(q);
      }
      if (ok) {
        TemplateItem<T> item;
        item.image = identity ? img : warp_affine(img, m, img.h, img.w);
        item.landmarks = std::move(mapped);
        out.items.push_back(std::move(item));
        break;
      }
      if (++attempts >= 1000)
        throw config_error(
            "build_augmented_template_set: 1000 consecutive redraws failed; augmentation "
            "ranges push landmarks off-image");
    }
  }
  return out;
}

// Random affine about the patch center plus brightness/contrast jitter.
// Redrawn if the mapped center exits the patch.
template <typename T>
Patch<T> augment_patch(const Patch<T>& patch, const AffineAugParams& params,
                       std::uint64_t seed) {
  params.validate();
  const int P = patch.pixels.h;
  const double cx = (P - 1) / 2.0, cy = (P - 1) / 2.0;
  Rng rng(seed);

  Affine2 m;
  LandmarkPoint mapped = patch.center_in_patch;
  if (!params.is_identity_affine()) {
    int attempts = 0;
    for (;;) {
      m = draw_affine(params, cx, cy, rng);
      mapped = m.apply(patch.center_in_patch);
      if (mapped.x >= 0.0 && mapped.x < P && mapped.y >= 0.0 && mapped.y < P) break;
      if (++attempts >= 1000)
        throw config_error("augment_patch: 1000 consecutive redraws failed");
    }
  }

  Patch<T> out;
  out.pixels = params.is_identity_affine() ? patch.pixels
                                           : warp_affine(patch.pixels, m, P, P);
  out.source_image_id = patch.source_image_id;
  out.center_in_source = patch.center_in_source;
  out.center_in_patch = mapped;

  const double contrast = rng.uniform(params.contrast.lo, params.contrast.hi);
  const double brightness = rng.uniform(params.brightness.lo, params.brightness.hi);
  if (contrast != 1.0 || brightness != 0.0) {
    for (auto& px : out.pixels.v) {
      const double val = static_cast<double>(px) * contrast + brightness;
      px = static_cast<T>(std::clamp(val, 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace osld
