#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "osld/dataset.hpp"
#include "osld/rng.hpp"
#include "osld/tensor.hpp"

namespace osld {

// distinct: every landmark gets its own motif orientation/wavelength.
// paired: motifs come in near-identical pairs (k, k+1), so telling the two
// instances in one image apart needs landmark-specific features. Used for
// the seesaw/adapter experiments.
enum class MotifStyle { distinct, paired };

struct SynthConfig {
  int n_train = 40;
  int n_test = 20;
  int image_size = 192;
  int num_landmarks = 4;
  double noise_std = 0.02;
  double shape_jitter_px = 6.0;
  std::uint64_t seed = 1;
  MotifStyle motif_style = MotifStyle::distinct;

  void validate() const {
    if (n_train < 2) throw config_error("synth: n_train must be >= 2");
    if (n_test < 0) throw config_error("synth: n_test must be >= 0");
    if (num_landmarks < 1) throw config_error("synth: K must be >= 1");
    if (image_size < 64) throw config_error("synth: image_size must be >= 64");
    if (noise_std < 0.0 || noise_std > 1.0)
      throw config_error("synth: noise_std must be in [0, 1]");
    if (shape_jitter_px < 0.0) throw config_error("synth: shape_jitter_px must be >= 0");
  }
};

namespace detail {

struct Motif {
  double angle;       // carrier orientation
  double wavelength;  // carrier period, px
  double sigma;       // Gaussian envelope, px
  double amplitude;
  double ring;        // secondary radial ripple weight
};

inline Motif make_motif(const SynthConfig& cfg, int k) {
  const double sigma = cfg.image_size / 26.0;
  Motif m;
  m.sigma = sigma;
  m.amplitude = 0.55;
  if (cfg.motif_style == MotifStyle::paired) {
    // pair (2q, 2q+1): same wavelength, orientations 12 degrees apart
    const int q = k / 2;
    m.angle = (0.9 * q) + (k % 2) * (12.0 * M_PI / 180.0);
    m.wavelength = sigma * (1.15 + 0.5 * (q % 3));
    m.ring = 0.0;
  } else {
    m.angle = M_PI * k / std::max(1, cfg.num_landmarks) + 0.31;
    m.wavelength = sigma * (0.9 + 0.45 * (k % 4));
    m.ring = (k % 2) ? 0.35 : 0.0;
  }
  return m;
}

inline double motif_value(const Motif& m, double dx, double dy) {
  const double r2 = dx * dx + dy * dy;
  const double env = std::exp(-r2 / (2.0 * m.sigma * m.sigma));
  const double d = dx * std::cos(m.angle) + dy * std::sin(m.angle);
  double v = std::cos(2.0 * M_PI * d / m.wavelength);
  if (m.ring != 0.0) v = (1.0 - m.ring) * v + m.ring * std::cos(2.0 * M_PI * std::sqrt(r2) / m.wavelength);
  return m.amplitude * env * v;
}

// K anchor positions on a jittered grid inside the safe margin. A grid
// keeps neighbors separated deterministically; the per-dataset offsets
// stop the layout from being axis-trivial.
inline std::vector<std::pair<int, int>> draw_anchors(const SynthConfig& cfg, int margin,
                                                     double sigma, Rng& rng) {
  const int usable = cfg.image_size - 2 * margin;
  const int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.num_landmarks))));
  const double cell = static_cast<double>(usable) / g;
  const double needed = 3.0 * sigma + 2.0 * cfg.shape_jitter_px;
  if (cell < needed)
    throw config_error("synth: cannot place " + std::to_string(cfg.num_landmarks) +
                       " landmarks in a " + std::to_string(cfg.image_size) +
                       " px image with jitter " + std::to_string(cfg.shape_jitter_px));
  const double wiggle = std::max(0.0, (cell - needed) / 2.0);
  std::vector<std::pair<int, int>> anchors;
  for (int k = 0; k < cfg.num_landmarks; ++k) {
    const int gx = k % g, gy = k / g;
    const double cx = margin + (gx + 0.5) * cell + rng.uniform(-wiggle, wiggle);
    const double cy = margin + (gy + 0.5) * cell + rng.uniform(-wiggle, wiggle);
    anchors.emplace_back(static_cast<int>(std::lround(cx)), static_cast<int>(std::lround(cy)));
  }
  return anchors;
}

}  // namespace detail

// Deterministic synthetic dataset. Each image is a smooth background plus
// K motif stamps; the stamp centers (integer pixels) are the ground truth.
// spacing_mm = 1 and no resize, so px and mm errors coincide.
template <typename T>
DatasetSplit<T> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const int jitter = static_cast<int>(std::ceil(cfg.shape_jitter_px));
  const int margin = cfg.image_size / 4 + jitter + 2;
  if (2 * margin >= cfg.image_size)
    throw config_error("synth: jitter too large for image size");

  std::vector<detail::Motif> motifs;
  for (int k = 0; k < cfg.num_landmarks; ++k) motifs.push_back(detail::make_motif(cfg, k));
  double max_sigma = 0.0;
  for (const auto& m : motifs) max_sigma = std::max(max_sigma, m.sigma);

  Rng layout_rng(mix_seed(cfg.seed, 0xa11c0));
  const auto anchors = detail::draw_anchors(cfg, margin, max_sigma, layout_rng);

  auto make_image = [&](int index, const std::string& id) {
    Rng rng(mix_seed(cfg.seed, 1000 + index));
    Tensor<T> img(1, cfg.image_size, cfg.image_size);
    // low-frequency background, varies per image
    const double base = 0.40;
    const double gx = rng.uniform(-0.08, 0.08);
    const double gy = rng.uniform(-0.08, 0.08);
    const double gd = rng.uniform(-0.05, 0.05);
    for (int y = 0; y < cfg.image_size; ++y)
      for (int x = 0; x < cfg.image_size; ++x) {
        const double u = static_cast<double>(x) / cfg.image_size - 0.5;
        const double v = static_cast<double>(y) / cfg.image_size - 0.5;
        img.at(0, y, x) = static_cast<T>(base + gx * u + gy * v + gd * u * v);
      }
    // motifs; centers are the ground truth
    std::vector<LandmarkPoint> gt;
    for (int k = 0; k < cfg.num_landmarks; ++k) {
      const int jx = jitter ? static_cast<int>(rng.uniform_int(-jitter, jitter)) : 0;
      const int jy = jitter ? static_cast<int>(rng.uniform_int(-jitter, jitter)) : 0;
      const int cx = anchors[k].first + jx;
      const int cy = anchors[k].second + jy;
      const int rad = static_cast<int>(std::ceil(3.0 * motifs[k].sigma));
      for (int y = std::max(0, cy - rad); y <= std::min(cfg.image_size - 1, cy + rad); ++y)
        for (int x = std::max(0, cx - rad); x <= std::min(cfg.image_size - 1, cx + rad); ++x)
          img.at(0, y, x) = static_cast<T>(static_cast<double>(img.at(0, y, x)) +
                                           detail::motif_value(motifs[k], x - cx, y - cy));
      gt.push_back({static_cast<double>(cx), static_cast<double>(cy), Frame::original});
    }
    // noise, then clamp into [0, 1]
    for (auto& px : img.v) {
      double x = static_cast<double>(px);
      if (cfg.noise_std > 0.0) x += cfg.noise_std * rng.normal();
      px = static_cast<T>(std::clamp(x, 0.0, 1.0));
    }
    return make_image_record<T>(id, std::move(img), cfg.image_size,
                                std::vector<LandmarkPoint>(gt), 1.0);
  };

  DatasetSplit<T> split;
  split.num_landmarks = cfg.num_landmarks;
  char buf[32];
  for (int i = 0; i < cfg.n_train; ++i) {
    std::snprintf(buf, sizeof(buf), "train_%03d", i);
    split.train.push_back(make_image(i, buf));
  }
  for (int i = 0; i < cfg.n_test; ++i) {
    std::snprintf(buf, sizeof(buf), "test_%03d", i);
    split.test.push_back(make_image(cfg.n_train + i, buf));
  }
  split.template_image = split.train.front();
  return split;
}

}  // namespace osld
