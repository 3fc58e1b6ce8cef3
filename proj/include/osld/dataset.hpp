#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "osld/geometry.hpp"
#include "osld/tensor.hpp"
#include "osld/warp.hpp"

namespace osld {

// One grayscale image at original and network resolution. Ground truth,
// when present, stays in the original frame; spacing_mm applies to the
// original frame only. Immutable after construction.
template <typename T>
struct ImageRecord {
  std::string id;
  Tensor<T> original;            // 1 x H0 x W0, values in [0, 1]
  Tensor<T> resized;             // 1 x S x S
  ResizeTransform transform;
  std::optional<std::vector<LandmarkPoint>> ground_truth;  // original frame
  double spacing_mm = 1.0;
};

template <typename T>
ImageRecord<T> make_image_record(std::string id, Tensor<T> original, int input_size,
                                 std::optional<std::vector<LandmarkPoint>> gt,
                                 double spacing_mm) {
  require(original.c == 1, "make_image_record: grayscale input expected");
  ImageRecord<T> rec;
  rec.id = std::move(id);
  rec.transform = make_resize_transform(original.w, original.h, input_size, input_size);
  rec.resized = resize_bilinear(original, input_size, input_size);
  rec.original = std::move(original);
  rec.ground_truth = std::move(gt);
  rec.spacing_mm = spacing_mm;
  return rec;
}

template <typename T>
LandmarkPoint gt_resized(const ImageRecord<T>& rec, int k) {
  require(rec.ground_truth.has_value(), "gt_resized: record has no ground truth");
  require(k >= 0 && k < static_cast<int>(rec.ground_truth->size()),
          "gt_resized: landmark id out of range");
  return map_coords((*rec.ground_truth)[k], rec.transform, MapDirection::to_resized);
}

template <typename T>
struct DatasetSplit {
  std::vector<ImageRecord<T>> train;
  std::vector<ImageRecord<T>> test;
  ImageRecord<T> template_image;  // ground_truth always present
  int num_landmarks = 0;
};

// Positions at least half a patch from every border, where patch cropping
// is always valid. Crop windows are anchored at round(center), so the
// bounds below are what crop_patch actually needs.
struct CroppableRegion {
  int width = 0, height = 0, margin = 0;

  bool contains(const LandmarkPoint& p) const {
    const long lx = std::lround(p.x), ly = std::lround(p.y);
    return lx >= margin && lx <= width - margin && ly >= margin && ly <= height - margin;
  }

  LandmarkPoint clamp(const LandmarkPoint& p) const {
    LandmarkPoint out = p;
    out.x = std::min(std::max(p.x, static_cast<double>(margin)),
                     static_cast<double>(width - margin));
    out.y = std::min(std::max(p.y, static_cast<double>(margin)),
                     static_cast<double>(height - margin));
    return out;
  }
};

inline CroppableRegion croppable_region(int input_size, int patch_size) {
  require(patch_size > 0 && patch_size % 2 == 0, "croppable_region: patch size must be even");
  require(input_size >= patch_size, "croppable_region: image smaller than patch");
  return {input_size, input_size, patch_size / 2};
}

// Per (image id, landmark id) pseudo-label in the resized frame.
// Single-writer: Infer-PL rewrites entries at the end of each epoch and
// bumps epoch_stamp; all Train-PL reads happen strictly between rewrites.
class PseudoLabelStore {
 public:
  PseudoLabelStore() = default;
  PseudoLabelStore(int input_size, int patch_size)
      : region_(croppable_region(input_size, patch_size)) {}

  const CroppableRegion& region() const { return region_; }

  void set(const std::string& image_id, int k, const LandmarkPoint& p) {
    require(p.frame == Frame::resized, "PseudoLabelStore::set: resized-frame point expected");
    require(region_.contains(p),
            "PseudoLabelStore::set: point outside the croppable region for image " + image_id);
    entries_[{image_id, k}] = p;
  }

  const LandmarkPoint& get(const std::string& image_id, int k) const {
    auto it = entries_.find({image_id, k});
    require(it != entries_.end(),
            "PseudoLabelStore::get: missing entry for (" + image_id + ", " +
                std::to_string(k) + ")");
    return it->second;
  }

  bool has(const std::string& image_id, int k) const {
    return entries_.count({image_id, k}) > 0;
  }

  std::size_t size() const { return entries_.size(); }

  const std::map<std::pair<std::string, int>, LandmarkPoint>& entries() const {
    return entries_;
  }

  std::int64_t epoch_stamp() const { return epoch_stamp_; }
  void set_epoch_stamp(std::int64_t e) { epoch_stamp_ = e; }

 private:
  CroppableRegion region_{0, 0, 0};
  std::map<std::pair<std::string, int>, LandmarkPoint> entries_;
  std::int64_t epoch_stamp_ = 0;
};

}  // namespace osld
