#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "osld/dataset.hpp"
#include "osld/nn/blob.hpp"
#include "osld/nn/model.hpp"

namespace osld {

// Checkpoint directory layout:
//   manifest.json        structure, tensor table with checksums, config hash
//   tensors/<name>.bin   little-endian float32 blobs (backbone included,
//                        so a checkpoint reloads with no other inputs)
//   pseudo_labels.csv    image_id,landmark_id,x,y (resized frame)
// Round trips are bitwise-exact for float models.

namespace detail {

inline nlohmann::json bank_config_json(const nn::BankConfig& c) {
  return {{"levels", c.levels},
          {"num_landmarks", c.num_landmarks},
          {"adapter_channels", c.adapter_channels},
          {"embed_dim", c.embed_dim},
          {"backbone_channels", c.backbone_channels},
          {"decoder_channels", c.decoder_channels},
          {"rfb_channels", c.rfb_channels},
          {"rfb_adapter_channels", c.rfb_adapter_channels},
          {"rfb_dilations", c.rfb_dilations},
          {"init_seed", c.init_seed}};
}

inline nn::BankConfig bank_config_from_json(const nlohmann::json& j) {
  nn::BankConfig c;
  c.levels = j.at("levels").get<int>();
  c.num_landmarks = j.at("num_landmarks").get<int>();
  c.adapter_channels = j.at("adapter_channels").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.backbone_channels = j.at("backbone_channels").get<std::vector<int>>();
  c.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
  c.rfb_channels = j.at("rfb_channels").get<int>();
  c.rfb_adapter_channels = j.at("rfb_adapter_channels").get<int>();
  c.rfb_dilations = j.at("rfb_dilations").get<std::vector<int>>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

template <typename T, typename Fn>
void visit_model_params(nn::Model<T>& model, Fn&& fn) {
  model.backbone->visit_params(
      [&](const std::string& name, std::vector<T>& v) { fn(name, v); });
  nn::visit_bank_params(model.bank, [&](const nn::ParamDesc<T>& p) {
    if (!p.conv->w.empty()) fn(p.name + ".w", p.conv->w);
    if (!p.conv->b.empty()) fn(p.name + ".b", p.conv->b);
  });
}

}  // namespace detail

struct CheckpointMeta {
  std::string mode;
  int epoch = 0;
  int landmark_id = -1;  // dataset landmark for sla models
  int input_size = 0;
  int patch_size = 0;
  std::uint64_t config_hash = 0;
  // tiny-backbone recipe, kept so loads can rebuild the frozen extractor
  std::vector<int> backbone_channels;
  std::uint64_t backbone_seed = 0;
};

template <typename T>
void save_checkpoint(const std::string& dir, nn::Model<T>& model,
                     const PseudoLabelStore& store, const CheckpointMeta& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "tensors");

  nlohmann::json manifest;
  manifest["format"] = 1;
  manifest["mode"] = meta.mode;
  manifest["epoch"] = meta.epoch;
  manifest["landmark_id"] = meta.landmark_id;
  manifest["input_size"] = meta.input_size;
  manifest["patch_size"] = meta.patch_size;
  manifest["config_hash"] = meta.config_hash;
  manifest["epoch_stamp"] = store.epoch_stamp();
  manifest["bank"] = detail::bank_config_json(model.bank.cfg);
  manifest["backbone"] = {{"type", "tiny"},
                          {"channels", meta.backbone_channels},
                          {"seed", meta.backbone_seed}};

  nlohmann::json tensors = nlohmann::json::array();
  detail::visit_model_params(model, [&](const std::string& name, std::vector<T>& v) {
    const auto file = fs::path(dir) / "tensors" / (name + ".bin");
    const std::uint64_t checksum = nn::write_f32_blob(file, v);
    tensors.push_back({{"name", name},
                       {"count", v.size()},
                       {"dtype", "f32le"},
                       {"checksum", checksum}});
  });
  manifest["tensors"] = tensors;

  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw data_error("cannot write checkpoint manifest under " + dir);
  mf << manifest.dump(2) << "\n";

  std::ofstream pl(fs::path(dir) / "pseudo_labels.csv");
  if (!pl) throw data_error("cannot write pseudo_labels.csv under " + dir);
  pl.precision(10);
  pl << "image_id,landmark_id,x,y\n";
  for (const auto& [key, p] : store.entries())
    pl << key.first << "," << key.second << "," << p.x << "," << p.y << "\n";
}

template <typename T>
struct LoadedCheckpoint {
  nn::Model<T> model;
  PseudoLabelStore store;
  CheckpointMeta meta;
};

// current_config_hash != 0 enables the compatibility check: a mismatch is
// surfaced as a warning (inference against a differently-configured run
// is legitimate), never a failure.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& dir,
                                    std::uint64_t current_config_hash = 0) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw data_error("missing checkpoint manifest under " + dir);
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed checkpoint manifest under " + dir + ": " + e.what());
  }

  CheckpointMeta meta;
  meta.mode = manifest.at("mode").get<std::string>();
  meta.epoch = manifest.at("epoch").get<int>();
  meta.landmark_id = manifest.at("landmark_id").get<int>();
  meta.input_size = manifest.at("input_size").get<int>();
  meta.patch_size = manifest.at("patch_size").get<int>();
  meta.config_hash = manifest.at("config_hash").get<std::uint64_t>();
  meta.backbone_channels = manifest.at("backbone").at("channels").get<std::vector<int>>();
  meta.backbone_seed = manifest.at("backbone").at("seed").get<std::uint64_t>();

  if (current_config_hash != 0 && current_config_hash != meta.config_hash)
    std::cerr << "warning: checkpoint " << dir
              << " was trained under a different configuration; proceeding\n";

  nn::TinyBackboneConfig bc;
  bc.channels = meta.backbone_channels;
  bc.seed = meta.backbone_seed;
  auto backbone = std::make_shared<nn::TinyBackbone<T>>(bc);
  auto bank = nn::build_bank<T>(detail::bank_config_from_json(manifest.at("bank")));
  LoadedCheckpoint<T> out{nn::Model<T>{std::move(backbone), std::move(bank)},
                          PseudoLabelStore(meta.input_size, meta.patch_size), meta};

  std::map<std::string, std::pair<std::size_t, std::uint64_t>> table;
  for (const auto& t : manifest.at("tensors"))
    table[t.at("name").get<std::string>()] = {t.at("count").get<std::size_t>(),
                                              t.at("checksum").get<std::uint64_t>()};
  detail::visit_model_params(out.model, [&](const std::string& name, std::vector<T>& v) {
    auto it = table.find(name);
    if (it == table.end())
      throw data_error("checkpoint manifest has no entry for tensor '" + name + "'");
    if (it->second.first != v.size())
      throw data_error("checkpoint tensor '" + name + "' has count " +
                       std::to_string(it->second.first) + ", model expects " +
                       std::to_string(v.size()));
    nn::read_f32_blob(fs::path(dir) / "tensors" / (name + ".bin"), v.size(), v,
                      it->second.second, true);
  });

  std::ifstream pl(fs::path(dir) / "pseudo_labels.csv");
  if (!pl) throw data_error("missing pseudo_labels.csv under " + dir);
  std::string line;
  std::getline(pl, line);  // header
  while (std::getline(pl, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos || c3 == std::string::npos)
      throw data_error("malformed pseudo_labels.csv row under " + dir);
    out.store.set(line.substr(0, c1), std::stoi(line.substr(c1 + 1, c2 - c1 - 1)),
                  {std::stod(line.substr(c2 + 1, c3 - c2 - 1)), std::stod(line.substr(c3 + 1)),
                   Frame::resized});
  }
  out.store.set_epoch_stamp(manifest.at("epoch_stamp").get<std::int64_t>());
  return out;
}

}  // namespace osld
