#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "osld/geometry.hpp"

namespace osld {

inline const std::vector<double> kDefaultSdrThresholdsMm{2.0, 2.5, 3.0, 4.0};

// Predictions arrive in the resized frame; distances are measured in the
// original frame (map back, then Euclidean pixels times spacing_mm).
inline std::vector<double> radial_errors(const std::vector<LandmarkPoint>& preds,
                                         const std::vector<LandmarkPoint>& gts,
                                         const ResizeTransform& transform,
                                         double spacing_mm) {
  require(preds.size() == gts.size(), "radial_errors: prediction/ground-truth count mismatch");
  require(spacing_mm > 0.0, "radial_errors: spacing must be positive");
  std::vector<double> out;
  out.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const LandmarkPoint mapped = map_coords(preds[i], transform, MapDirection::to_original);
    out.push_back(distance_px(mapped, gts[i]) * spacing_mm);
  }
  return out;
}

inline double compute_mre(const std::vector<double>& distances_mm) {
  require(!distances_mm.empty(), "compute_mre: empty distance list");
  double sum = 0.0;
  for (double d : distances_mm) sum += d;
  return sum / static_cast<double>(distances_mm.size());
}

// Percentage of distances within each threshold; d == t counts as
// detected (inclusive boundary).
inline std::vector<double> compute_sdr(const std::vector<double>& distances_mm,
                                       const std::vector<double>& thresholds_mm) {
  require(!distances_mm.empty(), "compute_sdr: empty distance list");
  require(!thresholds_mm.empty(), "compute_sdr: no thresholds");
  for (std::size_t i = 0; i < thresholds_mm.size(); ++i) {
    require(thresholds_mm[i] > 0.0, "compute_sdr: thresholds must be positive");
    if (i > 0)
      require(thresholds_mm[i] > thresholds_mm[i - 1],
              "compute_sdr: thresholds must be ascending");
  }
  std::vector<double> out;
  out.reserve(thresholds_mm.size());
  for (double t : thresholds_mm) {
    std::size_t hits = 0;
    for (double d : distances_mm)
      if (d <= t) ++hits;
    out.push_back(100.0 * static_cast<double>(hits) / distances_mm.size());
  }
  return out;
}

struct LandmarkMetrics {
  double mre_mm = 0.0;
  std::vector<double> sdr;  // one per threshold, percent
  int n = 0;
};

// Per-landmark rows plus the aggregate "mean" row computed over the flat
// (image, landmark) distance list, Table-2 style.
struct EvaluationReport {
  std::vector<LandmarkMetrics> per_landmark;
  LandmarkMetrics aggregate;
  std::vector<double> thresholds_mm;
  int n_images = 0;
};

// distances grouped by landmark id: outer index k.
inline EvaluationReport per_landmark_report(const std::vector<std::vector<double>>& by_landmark,
                                            const std::vector<double>& thresholds_mm,
                                            int n_images = 0) {
  EvaluationReport rep;
  rep.thresholds_mm = thresholds_mm;
  rep.n_images = n_images;
  std::vector<double> flat;
  for (const auto& group : by_landmark) {
    require(!group.empty(), "per_landmark_report: a landmark has no distances");
    LandmarkMetrics m;
    m.mre_mm = compute_mre(group);
    m.sdr = compute_sdr(group, thresholds_mm);
    m.n = static_cast<int>(group.size());
    rep.per_landmark.push_back(std::move(m));
    flat.insert(flat.end(), group.begin(), group.end());
  }
  require(!flat.empty(), "per_landmark_report: no distances at all");
  rep.aggregate.mre_mm = compute_mre(flat);
  rep.aggregate.sdr = compute_sdr(flat, thresholds_mm);
  rep.aggregate.n = static_cast<int>(flat.size());
  return rep;
}

inline void write_report_csv(const EvaluationReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write report " + path);
  out << "landmark_id,mre_mm";
  for (double t : rep.thresholds_mm) {
    std::string label = std::to_string(t);
    label.erase(label.find_last_not_of('0') + 1);
    if (!label.empty() && label.back() == '.') label.pop_back();
    for (auto& ch : label)
      if (ch == '.') ch = '_';
    out << ",sdr" << label;
  }
  out << "\n";
  out.precision(10);
  for (std::size_t k = 0; k < rep.per_landmark.size(); ++k) {
    out << k << "," << rep.per_landmark[k].mre_mm;
    for (double s : rep.per_landmark[k].sdr) out << "," << s;
    out << "\n";
  }
  out << "mean," << rep.aggregate.mre_mm;
  for (double s : rep.aggregate.sdr) out << "," << s;
  out << "\n";
}

inline void write_report_json(const EvaluationReport& rep, const std::string& path) {
  nlohmann::json j;
  j["thresholds_mm"] = rep.thresholds_mm;
  j["n_images"] = rep.n_images;
  j["per_landmark"] = nlohmann::json::array();
  for (const auto& m : rep.per_landmark)
    j["per_landmark"].push_back({{"mre_mm", m.mre_mm}, {"sdr", m.sdr}, {"n", m.n}});
  j["aggregate"] = {{"mre_mm", rep.aggregate.mre_mm},
                    {"sdr", rep.aggregate.sdr},
                    {"n", rep.aggregate.n}};
  std::ofstream out(path);
  if (!out) throw data_error("cannot write report " + path);
  out << j.dump(2) << "\n";
}

}  // namespace osld
