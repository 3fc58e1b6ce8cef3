#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "osld/nn/blob.hpp"
#include "osld/trainer.hpp"

namespace osld {

// Flat typed key = value run configuration. '#' starts a comment; ranges
// and channel plans are bracketed lists. Unknown keys are rejected so a
// typo never silently falls back to a default.

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::int64_t x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw config_error("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<std::string> parse_list(const std::string& key, const std::string& v) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']')
    throw config_error("config key '" + key + "': expected [a, b, ...], got '" + v + "'");
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(v.substr(1, v.size() - 2));
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline Range parse_range(const std::string& key, const std::string& v) {
  const auto items = parse_list(key, v);
  if (items.size() != 2)
    throw config_error("config key '" + key + "': expected a [min, max] pair");
  return {parse_real(key, items[0]), parse_real(key, items[1])};
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& item : parse_list(key, v))
    out.push_back(static_cast<int>(parse_int(key, item)));
  return out;
}

}  // namespace detail

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config " + path + ":" + std::to_string(lineno) +
                         ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw config_error("config " + path + ":" + std::to_string(lineno) +
                         ": empty key or value");
    if (kv.count(key))
      throw config_error("config " + path + ": duplicate key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

struct RunConfig {
  TrainConfig train;
  bool deterministic = false;  // single-threaded, bit-reproducible runs
};

// Applies one key. Returns false for unknown keys (caller decides how to
// report, so CLI overrides and file parsing share this table).
inline bool apply_config_key(RunConfig& rc, const std::string& key, const std::string& v) {
  using namespace detail;
  TrainConfig& t = rc.train;
  if (key == "mode") t.mode = parse_train_mode(v);
  else if (key == "num_landmarks") t.num_landmarks = static_cast<int>(parse_int(key, v));
  else if (key == "epochs") t.epochs = static_cast<int>(parse_int(key, v));
  else if (key == "batch_size") t.batch_size = static_cast<int>(parse_int(key, v));
  else if (key == "learning_rate") t.learning_rate = parse_real(key, v);
  else if (key == "optimizer") t.optimizer = v;
  else if (key == "seed") t.seed = static_cast<std::uint64_t>(parse_int(key, v));
  else if (key == "input_size") t.input_size = static_cast<int>(parse_int(key, v));
  else if (key == "patch_size") t.patch_size = static_cast<int>(parse_int(key, v));
  else if (key == "adapter_channels") t.adapter_channels = static_cast<int>(parse_int(key, v));
  else if (key == "embed_dim") t.embed_dim = static_cast<int>(parse_int(key, v));
  else if (key == "template_aug_n") t.template_aug_n = static_cast<int>(parse_int(key, v));
  else if (key == "jobs") t.jobs = static_cast<int>(parse_int(key, v));
  else if (key == "ssl.tau") t.ssl.tau = parse_real(key, v);
  else if (key == "ssl.window_px") t.ssl.window_px = static_cast<int>(parse_int(key, v));
  else if (key == "aug.shift_px") t.aug.shift_px = parse_range(key, v);
  else if (key == "aug.rotation_deg") t.aug.rotation_deg = parse_range(key, v);
  else if (key == "aug.scale") t.aug.scale = parse_range(key, v);
  else if (key == "aug.brightness") t.aug.brightness = parse_range(key, v);
  else if (key == "aug.contrast") t.aug.contrast = parse_range(key, v);
  else if (key == "net.levels") t.levels = static_cast<int>(parse_int(key, v));
  else if (key == "net.backbone_channels") t.backbone_channels = parse_int_list(key, v);
  else if (key == "net.decoder_channels") t.decoder_channels = parse_int_list(key, v);
  else if (key == "net.rfb_channels") t.rfb_channels = static_cast<int>(parse_int(key, v));
  else if (key == "net.rfb_adapter_channels")
    t.rfb_adapter_channels = static_cast<int>(parse_int(key, v));
  else if (key == "net.backbone_seed") t.backbone_seed = static_cast<std::uint64_t>(parse_int(key, v));
  else if (key == "net.backbone_weights") t.backbone_weights = v;
  else if (key == "deterministic") rc.deterministic = parse_bool(key, v);
  else return false;
  return true;
}

inline void apply_config_file(RunConfig& rc, const std::string& path) {
  for (const auto& [key, value] : parse_config_file(path))
    if (!apply_config_key(rc, key, value))
      throw config_error("config " + path + ": unknown key '" + key + "'");
}

namespace detail {

inline std::string format_range(const Range& r) {
  std::ostringstream ss;
  ss << "[" << r.lo << ", " << r.hi << "]";
  return ss.str();
}

template <typename V>
std::string format_list(const std::vector<V>& v) {
  std::ostringstream ss;
  ss << "[";
  for (std::size_t i = 0; i < v.size(); ++i) ss << (i ? ", " : "") << v[i];
  ss << "]";
  return ss.str();
}

}  // namespace detail

// Canonical serialization: the provenance echo written next to run
// outputs, and the input of the config hash stored in checkpoints.
inline std::string serialize_config(const RunConfig& rc) {
  const TrainConfig& t = rc.train;
  std::ostringstream ss;
  ss.precision(17);
  ss << "mode = " << train_mode_name(t.mode) << "\n"
     << "num_landmarks = " << t.num_landmarks << "\n"
     << "epochs = " << t.epochs << "\n"
     << "batch_size = " << t.batch_size << "\n"
     << "learning_rate = " << t.learning_rate << "\n"
     << "optimizer = " << t.optimizer << "\n"
     << "seed = " << t.seed << "\n"
     << "input_size = " << t.input_size << "\n"
     << "patch_size = " << t.patch_size << "\n"
     << "adapter_channels = " << t.adapter_channels << "\n"
     << "embed_dim = " << t.embed_dim << "\n"
     << "template_aug_n = " << t.template_aug_n << "\n"
     << "jobs = " << t.jobs << "\n"
     << "ssl.tau = " << t.ssl.tau << "\n"
     << "ssl.window_px = " << t.ssl.window_px << "\n"
     << "aug.shift_px = " << detail::format_range(t.aug.shift_px) << "\n"
     << "aug.rotation_deg = " << detail::format_range(t.aug.rotation_deg) << "\n"
     << "aug.scale = " << detail::format_range(t.aug.scale) << "\n"
     << "aug.brightness = " << detail::format_range(t.aug.brightness) << "\n"
     << "aug.contrast = " << detail::format_range(t.aug.contrast) << "\n"
     << "net.levels = " << t.levels << "\n"
     << "net.backbone_channels = " << detail::format_list(t.backbone_channels) << "\n"
     << "net.decoder_channels = " << detail::format_list(t.decoder_channels) << "\n"
     << "net.rfb_channels = " << t.rfb_channels << "\n"
     << "net.rfb_adapter_channels = " << t.rfb_adapter_channels << "\n"
     << "net.backbone_seed = " << t.backbone_seed << "\n"
     << "net.backbone_weights = " << t.backbone_weights << "\n"
     << "deterministic = " << (rc.deterministic ? "true" : "false") << "\n";
  return ss.str();
}

inline std::uint64_t config_hash(const RunConfig& rc) {
  const std::string s = serialize_config(rc);
  return nn::fnv1a(s.data(), s.size());
}

}  // namespace osld
