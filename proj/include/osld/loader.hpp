#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "osld/dataset.hpp"
#include "osld/image_io.hpp"

namespace osld {

// Dataset directory layout:
//   root/images/<id>.png|pgm
//   root/annotations/<id>.csv        rows: landmark_id,x,y (original frame)
//   root/split.json                  {"train": [...], "test": [...],
//                                     "template": id, "spacing_mm": r,
//                                     "num_landmarks": K}

namespace detail {

inline std::filesystem::path find_image_file(const std::filesystem::path& images_dir,
                                             const std::string& id) {
  for (const char* ext : {".pgm", ".png"}) {
    auto p = images_dir / (id + ext);
    if (std::filesystem::exists(p)) return p;
  }
  throw data_error("missing image file for id '" + id + "' under " + images_dir.string());
}

inline std::vector<LandmarkPoint> read_annotation_csv(const std::filesystem::path& path,
                                                      int expected_k) {
  std::ifstream in(path);
  if (!in) throw data_error("missing annotation file " + path.string());
  std::vector<std::pair<int, LandmarkPoint>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    int id = 0;
    double x = 0.0, y = 0.0;
    char c1 = 0, c2 = 0;
    ss >> id >> c1 >> x >> c2 >> y;
    if (!ss || c1 != ',' || c2 != ',')
      throw data_error("malformed annotation row " + std::to_string(lineno) + " in " +
                       path.string());
    rows.emplace_back(id, LandmarkPoint{x, y, Frame::original});
  }
  if (static_cast<int>(rows.size()) != expected_k)
    throw data_error("annotation file " + path.string() + " has " +
                     std::to_string(rows.size()) + " rows, expected " +
                     std::to_string(expected_k));
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (int i = 0; i < expected_k; ++i)
    if (rows[i].first != i)
      throw data_error("annotation file " + path.string() +
                       " does not cover landmark ids 0.." + std::to_string(expected_k - 1));
  std::vector<LandmarkPoint> out;
  out.reserve(rows.size());
  for (auto& r : rows) out.push_back(r.second);
  return out;
}

}  // namespace detail

template <typename T>
DatasetSplit<T> load_dataset(const std::string& root_dir, int input_size) {
  namespace fs = std::filesystem;
  const fs::path root(root_dir);
  const fs::path split_path = root / "split.json";
  std::ifstream split_in(split_path);
  if (!split_in) throw data_error("missing split file " + split_path.string());
  nlohmann::json j;
  try {
    split_in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed split file " + split_path.string() + ": " + e.what());
  }
  for (const char* key : {"train", "test", "template", "spacing_mm", "num_landmarks"})
    if (!j.contains(key))
      throw config_error("split.json is missing required field '" + std::string(key) + "'");

  const auto train_ids = j["train"].get<std::vector<std::string>>();
  const auto test_ids = j["test"].get<std::vector<std::string>>();
  const auto template_id = j["template"].get<std::string>();
  const double spacing_mm = j["spacing_mm"].get<double>();
  const int K = j["num_landmarks"].get<int>();
  if (K < 1) throw config_error("split.json: num_landmarks must be >= 1");
  if (spacing_mm <= 0.0) throw config_error("split.json: spacing_mm must be positive");
  if (train_ids.empty()) throw config_error("split.json: empty training split");

  std::set<std::string> train_set(train_ids.begin(), train_ids.end());
  if (train_set.size() != train_ids.size())
    throw config_error("split.json: duplicate ids in the training split");
  for (const auto& id : test_ids)
    if (train_set.count(id))
      throw config_error("split.json: id '" + id + "' appears in both train and test");
  if (!train_set.count(template_id))
    throw config_error("split.json: template id '" + template_id +
                       "' is not in the training split");

  auto load_one = [&](const std::string& id) {
    auto img = read_image<T>(detail::find_image_file(root / "images", id).string());
    auto gt = detail::read_annotation_csv(root / "annotations" / (id + ".csv"), K);
    return make_image_record<T>(id, std::move(img), input_size, std::move(gt), spacing_mm);
  };

  DatasetSplit<T> split;
  split.num_landmarks = K;
  for (const auto& id : train_ids) split.train.push_back(load_one(id));
  for (const auto& id : test_ids) split.test.push_back(load_one(id));
  for (const auto& rec : split.train)
    if (rec.id == template_id) split.template_image = rec;
  return split;
}

// Writes a DatasetSplit back out in the directory layout above. The
// synthetic generator and the synth-data CLI subcommand both go through
// here, so generated datasets reload transparently.
template <typename T>
void write_dataset(const DatasetSplit<T>& split, const std::string& out_dir,
                   const std::string& template_id = "") {
  namespace fs = std::filesystem;
  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "annotations");

  auto dump_one = [&](const ImageRecord<T>& rec) {
    write_pgm16((root / "images" / (rec.id + ".pgm")).string(), rec.original);
    require(rec.ground_truth.has_value(), "write_dataset: record without annotations");
    std::ofstream ann(root / "annotations" / (rec.id + ".csv"));
    if (!ann) throw data_error("cannot write annotation for " + rec.id);
    ann.precision(10);
    for (std::size_t k = 0; k < rec.ground_truth->size(); ++k)
      ann << k << "," << (*rec.ground_truth)[k].x << "," << (*rec.ground_truth)[k].y << "\n";
  };

  nlohmann::json j;
  j["train"] = nlohmann::json::array();
  j["test"] = nlohmann::json::array();
  for (const auto& rec : split.train) {
    dump_one(rec);
    j["train"].push_back(rec.id);
  }
  for (const auto& rec : split.test) {
    dump_one(rec);
    j["test"].push_back(rec.id);
  }
  j["template"] = template_id.empty() ? split.template_image.id : template_id;
  j["spacing_mm"] = split.train.front().spacing_mm;
  j["num_landmarks"] = split.num_landmarks;
  std::ofstream out(root / "split.json");
  if (!out) throw data_error("cannot write split.json under " + out_dir);
  out << j.dump(2) << "\n";
}

// Converter stub for raw ISBI-style annotation exports: a text file whose
// first K lines are "x,y" in original pixels. Writes our per-image CSV.
inline void convert_isbi_annotation(const std::string& txt_path, const std::string& csv_path,
                                    int K) {
  std::ifstream in(txt_path);
  if (!in) throw data_error("missing ISBI annotation file " + txt_path);
  std::ofstream out(csv_path);
  if (!out) throw data_error("cannot write " + csv_path);
  std::string line;
  for (int k = 0; k < K; ++k) {
    if (!std::getline(in, line))
      throw data_error("ISBI annotation " + txt_path + " has fewer than " +
                       std::to_string(K) + " points");
    double x, y;
    char comma;
    std::istringstream ss(line);
    ss >> x >> comma >> y;
    if (!ss) throw data_error("malformed ISBI annotation line in " + txt_path);
    out << k << "," << x << "," << y << "\n";
  }
}

}  // namespace osld
