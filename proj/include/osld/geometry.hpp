#pragma once

#include <cmath>
#include <string>

#include "osld/errors.hpp"

namespace osld {

// Coordinate convention, project-wide: x = column, y = row, zero-indexed,
// sub-pixel reals allowed. Points carry the frame they live in; mixing
// frames in arithmetic is a contract violation.
enum class Frame { original, resized, patch };

inline const char* frame_name(Frame f) {
  switch (f) {
    case Frame::original: return "original";
    case Frame::resized: return "resized";
    case Frame::patch: return "patch";
  }
  return "?";
}

struct LandmarkPoint {
  double x = 0.0;
  double y = 0.0;
  Frame frame = Frame::resized;
};

inline double distance_px(const LandmarkPoint& a, const LandmarkPoint& b) {
  require(a.frame == b.frame, std::string("distance_px: frame mismatch (") +
                                  frame_name(a.frame) + " vs " + frame_name(b.frame) + ")");
  return std::hypot(a.x - b.x, a.y - b.y);
}

// original_size / resized_size per axis; anisotropic (sx != sy) is the
// normal case for 1935x2400 -> 384x384.
struct ResizeTransform {
  double sx = 1.0;
  double sy = 1.0;
};

inline ResizeTransform make_resize_transform(int orig_w, int orig_h, int resized_w,
                                             int resized_h) {
  require(orig_w > 0 && orig_h > 0 && resized_w > 0 && resized_h > 0,
          "make_resize_transform: sizes must be positive");
  return {static_cast<double>(orig_w) / resized_w, static_cast<double>(orig_h) / resized_h};
}

enum class MapDirection { to_original, to_resized };

inline LandmarkPoint map_coords(const LandmarkPoint& p, const ResizeTransform& t,
                                MapDirection dir) {
  require(t.sx > 0.0 && t.sy > 0.0, "map_coords: non-positive scale");
  if (dir == MapDirection::to_original) {
    require(p.frame == Frame::resized, "map_coords: to_original expects a resized-frame point");
    return {p.x * t.sx, p.y * t.sy, Frame::original};
  }
  require(p.frame == Frame::original, "map_coords: to_resized expects an original-frame point");
  return {p.x / t.sx, p.y / t.sy, Frame::resized};
}

// 2-D affine p' = A p + t, mapping source coordinates to output coordinates.
struct Affine2 {
  double a = 1.0, b = 0.0;   // row 1
  double c = 0.0, d = 1.0;   // row 2
  double tx = 0.0, ty = 0.0;

  void apply(double x, double y, double& ox, double& oy) const {
    ox = a * x + b * y + tx;
    oy = c * x + d * y + ty;
  }

  LandmarkPoint apply(const LandmarkPoint& p) const {
    LandmarkPoint out = p;
    apply(p.x, p.y, out.x, out.y);
    return out;
  }

  Affine2 inverse() const {
    const double det = a * d - b * c;
    require(std::abs(det) > 1e-30, "Affine2::inverse: singular matrix");
    Affine2 inv;
    inv.a = d / det;
    inv.b = -b / det;
    inv.c = -c / det;
    inv.d = a / det;
    inv.tx = -(inv.a * tx + inv.b * ty);
    inv.ty = -(inv.c * tx + inv.d * ty);
    return inv;
  }
};

// scale -> rotate -> shift, all about the given center. The same matrix
// is used for the image warp and the landmark map, so the two can never
// drift apart.
inline Affine2 make_augment_affine(double cx, double cy, double shift_x, double shift_y,
                                   double rot_deg, double scale) {
  require(scale > 0.0, "make_augment_affine: scale must be positive");
  const double r = rot_deg * M_PI / 180.0;
  const double ca = std::cos(r), sa = std::sin(r);
  Affine2 m;
  m.a = ca * scale;
  m.b = -sa * scale;
  m.c = sa * scale;
  m.d = ca * scale;
  m.tx = cx + shift_x - (m.a * cx + m.b * cy);
  m.ty = cy + shift_y - (m.c * cx + m.d * cy);
  return m;
}

}  // namespace osld
