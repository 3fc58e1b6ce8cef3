#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "osld/checkpoint.hpp"
#include "osld/config.hpp"
#include "osld/image_io.hpp"
#include "osld/loader.hpp"
#include "osld/metrics.hpp"
#include "osld/synth.hpp"
#include "osld/trainer.hpp"

namespace osld::cli {

using Real = float;

// --- predictions file -------------------------------------------------
// First line carries the inference resolution so evaluate can rebuild the
// per-image resize transforms:
//   # input_size=<S>
//   image_id,landmark_id,x,y        (resized-frame coordinates)

struct PredictionRow {
  std::string image_id;
  int landmark_id;
  LandmarkPoint point;  // resized frame
};

inline void write_predictions(const std::string& path, int input_size,
                              const std::vector<PredictionRow>& rows) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write predictions file " + path);
  out.precision(10);
  out << "# input_size=" << input_size << "\n";
  out << "image_id,landmark_id,x,y\n";
  for (const auto& r : rows)
    out << r.image_id << "," << r.landmark_id << "," << r.point.x << "," << r.point.y << "\n";
}

struct PredictionSet {
  int input_size = 0;
  std::map<std::string, std::map<int, LandmarkPoint>> by_image;
};

inline PredictionSet read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("missing predictions file " + path);
  PredictionSet set;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# input_size=", 0) != 0)
    throw data_error("predictions file " + path + " lacks the '# input_size=' header");
  set.input_size = std::stoi(line.substr(std::string("# input_size=").size()));
  std::getline(in, line);  // column header
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos || c3 == std::string::npos)
      throw data_error("malformed predictions row at " + path + ":" + std::to_string(lineno));
    set.by_image[line.substr(0, c1)][std::stoi(line.substr(c1 + 1, c2 - c1 - 1))] = {
        std::stod(line.substr(c2 + 1, c3 - c2 - 1)), std::stod(line.substr(c3 + 1)),
        Frame::resized};
  }
  return set;
}

namespace detail {

inline std::string default_data_root() {
  const char* env = std::getenv("OSLD_DATA_ROOT");
  return env ? env : "";
}

// A checkpoint root is either a single checkpoint directory or a
// directory of them (one per landmark for sla runs).
inline std::vector<std::string> find_checkpoint_dirs(const std::string& root) {
  namespace fs = std::filesystem;
  if (fs::exists(fs::path(root) / "manifest.json")) return {root};
  if (fs::exists(fs::path(root) / "checkpoints"))
    return find_checkpoint_dirs((fs::path(root) / "checkpoints").string());
  std::vector<std::string> dirs;
  if (fs::is_directory(root))
    for (const auto& entry : fs::directory_iterator(root))
      if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
        dirs.push_back(entry.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw data_error("no checkpoints found under " + root);
  return dirs;
}

struct CrossStyle {
  unsigned char r, g, b;
};

inline void draw_cross(std::vector<std::uint8_t>& rgb, int h, int w, double px, double py,
                       int arm, const CrossStyle& style) {
  const int x = static_cast<int>(std::lround(px)), y = static_cast<int>(std::lround(py));
  auto put = [&](int yy, int xx) {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return;
    const std::size_t at = (static_cast<std::size_t>(yy) * w + xx) * 3;
    rgb[at] = style.r;
    rgb[at + 1] = style.g;
    rgb[at + 2] = style.b;
  };
  for (int d = -arm; d <= arm; ++d) {
    put(y + d, x);
    put(y, x + d);
  }
}

}  // namespace detail

// --- subcommands -------------------------------------------------------

inline int cmd_synth_data(const SynthConfig& cfg, const std::string& out_dir) {
  auto split = generate_synthetic<Real>(cfg);
  write_dataset(split, out_dir);
  std::cout << "wrote " << split.train.size() << " train + " << split.test.size()
            << " test images (K=" << split.num_landmarks << ") to " << out_dir << "\n";
  return 0;
}

inline int cmd_train(RunConfig rc, const std::string& data_root, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (rc.deterministic) rc.train.jobs = 1;
  rc.train.validate();
  auto data = load_dataset<Real>(data_root, rc.train.input_size);
  if (rc.train.num_landmarks == 0) rc.train.num_landmarks = data.num_landmarks;

  fs::create_directories(out_dir);
  {
    std::ofstream echo(fs::path(out_dir) / "config_resolved.toml");
    echo << serialize_config(rc);
  }

  const auto result = run_training(data, rc.train);

  std::ofstream log(fs::path(out_dir) / "train_log.jsonl");
  for (const auto& e : result.log) {
    nlohmann::json j{{"epoch", e.epoch},
                     {"landmark", e.k},
                     {"train_template_loss", e.train_template_loss},
                     {"train_pl_loss", e.train_pl_loss},
                     {"infer_pl_clamped", e.infer_pl_clamped}};
    log << j.dump() << "\n";
  }

  const std::uint64_t hash = config_hash(rc);
  for (const auto& trained : result.models) {
    char name[32];
    if (trained.k >= 0)
      std::snprintf(name, sizeof(name), "landmark_%02d", trained.k);
    else
      std::snprintf(name, sizeof(name), "joint");
    const auto dir = fs::path(out_dir) / "checkpoints" / name;
    CheckpointMeta meta;
    meta.mode = train_mode_name(rc.train.mode);
    meta.epoch = rc.train.epochs;
    meta.landmark_id = trained.k;
    meta.input_size = rc.train.input_size;
    meta.patch_size = rc.train.patch_size;
    meta.config_hash = hash;
    meta.backbone_channels = rc.train.backbone_channels;
    meta.backbone_seed = rc.train.backbone_seed;
    auto model = trained.model;  // save_checkpoint visits params non-const
    save_checkpoint(dir.string(), model, trained.store, meta);
    std::cout << "checkpoint: " << dir.string() << "\n";
  }
  return 0;
}

inline int cmd_infer(const std::string& ckpt_root, const std::string& data_root,
                     const std::string& out_path, const std::string& split_name) {
  const auto dirs = detail::find_checkpoint_dirs(ckpt_root);
  std::vector<LoadedCheckpoint<Real>> checkpoints;
  for (const auto& d : dirs) checkpoints.push_back(load_checkpoint<Real>(d));

  const int input_size = checkpoints.front().meta.input_size;
  const int patch_size = checkpoints.front().meta.patch_size;
  for (const auto& c : checkpoints)
    if (c.meta.input_size != input_size)
      throw data_error("checkpoints disagree on input_size; refusing to mix");

  auto data = load_dataset<Real>(data_root, input_size);
  const auto* images = &data.test;
  if (split_name == "train") images = &data.train;
  else if (split_name != "test")
    throw config_error("--split must be 'test' or 'train'");

  // landmark id -> (model, adapter slot)
  std::map<int, std::pair<const nn::Model<Real>*, int>> routing;
  for (const auto& c : checkpoints) {
    if (c.meta.landmark_id >= 0)
      routing[c.meta.landmark_id] = {&c.model, 0};
    else
      for (int k = 0; k < c.model.bank.cfg.num_landmarks; ++k) routing[k] = {&c.model, k};
  }
  for (int k = 0; k < data.num_landmarks; ++k)
    if (!routing.count(k))
      throw data_error("no checkpoint covers landmark " + std::to_string(k));

  CascadeConfig ssl;  // inference defaults; window/tau as shipped
  std::vector<PredictionRow> rows;
  for (int k = 0; k < data.num_landmarks; ++k) {
    const auto [model, slot] = routing.at(k);
    const auto tpatch = crop_patch(data.template_image.resized, data.template_image.id,
                                   gt_resized(data.template_image, k), patch_size);
    const auto centers = patch_center_embeddings(*model, tpatch, slot);
    for (const auto& rec : *images) {
      auto stack = similarity_maps(nn::embed_image(*model, rec.resized, slot), centers);
      rows.push_back({rec.id, k, cascade_infer(stack, ssl)});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const PredictionRow& a, const PredictionRow& b) {
    return a.image_id != b.image_id ? a.image_id < b.image_id
                                    : a.landmark_id < b.landmark_id;
  });
  write_predictions(out_path, input_size, rows);
  std::cout << "wrote " << rows.size() << " predictions to " << out_path << "\n";
  return 0;
}

inline int cmd_evaluate(const std::string& pred_path, const std::string& data_root,
                        const std::string& out_dir, std::vector<double> thresholds) {
  namespace fs = std::filesystem;
  const auto preds = read_predictions(pred_path);
  auto data = load_dataset<Real>(data_root, preds.input_size);
  if (thresholds.empty()) thresholds = kDefaultSdrThresholdsMm;

  std::map<std::string, const ImageRecord<Real>*> index;
  for (const auto& rec : data.test) index[rec.id] = &rec;
  for (const auto& rec : data.train) index.emplace(rec.id, &rec);

  std::vector<std::vector<double>> by_landmark(data.num_landmarks);
  int n_images = 0;
  for (const auto& [id, landmarks] : preds.by_image) {
    auto it = index.find(id);
    if (it == index.end())
      throw data_error("prediction for unknown image id '" + id + "'");
    const ImageRecord<Real>& rec = *it->second;
    require(rec.ground_truth.has_value(), "evaluate: image " + id + " has no annotations");
    ++n_images;
    for (const auto& [k, p] : landmarks) {
      require(k >= 0 && k < data.num_landmarks,
              "evaluate: prediction for out-of-range landmark " + std::to_string(k));
      const auto d = radial_errors({p}, {(*rec.ground_truth)[k]}, rec.transform,
                                   rec.spacing_mm);
      by_landmark[k].push_back(d[0]);
    }
  }
  for (int k = 0; k < data.num_landmarks; ++k)
    require(!by_landmark[k].empty(),
            "evaluate: no predictions for landmark " + std::to_string(k));

  const auto report = per_landmark_report(by_landmark, thresholds, n_images);
  fs::create_directories(out_dir);
  write_report_csv(report, (fs::path(out_dir) / "report.csv").string());
  write_report_json(report, (fs::path(out_dir) / "report.json").string());
  std::cout.precision(6);
  std::cout << "MRE " << report.aggregate.mre_mm << " mm;";
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    std::cout << " SDR@" << thresholds[i] << "mm " << report.aggregate.sdr[i] << "%";
  std::cout << " (" << n_images << " images)\n";
  return 0;
}

inline int cmd_visualize(const std::string& pred_path, const std::string& data_root,
                         const std::string& out_dir) {
  namespace fs = std::filesystem;
  const auto preds = read_predictions(pred_path);
  auto data = load_dataset<Real>(data_root, preds.input_size);
  fs::create_directories(out_dir);

  std::map<std::string, const ImageRecord<Real>*> index;
  for (const auto& rec : data.test) index[rec.id] = &rec;
  for (const auto& rec : data.train) index.emplace(rec.id, &rec);

  int written = 0;
  for (const auto& [id, landmarks] : preds.by_image) {
    auto it = index.find(id);
    if (it == index.end())
      throw data_error("prediction for unknown image id '" + id + "'");
    const ImageRecord<Real>& rec = *it->second;
    const int h = rec.original.h, w = rec.original.w;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
    for (std::size_t i = 0; i < rec.original.plane_size(); ++i) {
      const auto g = static_cast<std::uint8_t>(
          std::lround(std::clamp(static_cast<double>(rec.original.v[i]), 0.0, 1.0) * 255.0));
      rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = g;
    }
    const int arm = std::max(3, std::min(h, w) / 100);
    if (rec.ground_truth)
      for (const auto& gt : *rec.ground_truth)
        detail::draw_cross(rgb, h, w, gt.x, gt.y, arm, {0, 255, 0});
    for (const auto& [k, p] : landmarks) {
      const auto orig = map_coords(p, rec.transform, MapDirection::to_original);
      detail::draw_cross(rgb, h, w, orig.x, orig.y, arm, {255, 0, 0});
    }
    write_png_rgb((fs::path(out_dir) / (id + "_overlay.png")).string(), rgb, h, w);
    ++written;
  }
  std::cout << "wrote " << written << " overlays to " << out_dir << "\n";
  return 0;
}

// --- entry point --------------------------------------------------------

inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"one-shot landmark detection toolkit"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset");
  SynthConfig scfg;
  std::string synth_out;
  std::string motif_style = "distinct";
  synth->add_option("--k", scfg.num_landmarks, "number of landmarks")->capture_default_str();
  synth->add_option("--n-train", scfg.n_train, "training images")->capture_default_str();
  synth->add_option("--n-test", scfg.n_test, "test images")->capture_default_str();
  synth->add_option("--image-size", scfg.image_size, "image side, px")->capture_default_str();
  synth->add_option("--noise-std", scfg.noise_std, "pixel noise sigma")->capture_default_str();
  synth->add_option("--jitter", scfg.shape_jitter_px, "per-image landmark jitter, px")
      ->capture_default_str();
  synth->add_option("--seed", scfg.seed, "generator seed")->capture_default_str();
  synth->add_option("--motif-style", motif_style, "distinct | paired")
      ->capture_default_str();
  synth->add_option("--out", synth_out, "output dataset directory")->required();

  // train
  auto* train = app.add_subcommand("train", "run the training pipeline");
  std::string train_data = detail::default_data_root(), train_out, train_config;
  std::string train_mode;
  RunConfig rc;
  long long opt_epochs = -1, opt_seed = -1, opt_jobs = -1, opt_k = -1;
  bool opt_deterministic = false;
  train->add_option("--data", train_data, "dataset root (or $OSLD_DATA_ROOT)");
  train->add_option("--out", train_out, "run output directory")->required();
  train->add_option("--config", train_config, "flat key = value config file");
  train->add_option("--mode", train_mode, "sla | sla_atd | adapter_atd");
  train->add_option("--epochs", opt_epochs, "override: epochs");
  train->add_option("--seed", opt_seed, "override: seed");
  train->add_option("--jobs", opt_jobs, "parallel per-landmark trainings (sla modes)");
  train->add_option("--k", opt_k, "override: num_landmarks");
  train->add_flag("--deterministic", opt_deterministic,
                  "single-threaded bit-reproducible run");

  // infer
  auto* infer = app.add_subcommand("infer", "localize landmarks with trained checkpoints");
  std::string infer_ckpt, infer_data = detail::default_data_root(), infer_out,
              infer_split = "test";
  infer->add_option("--ckpt", infer_ckpt, "checkpoint dir or train output dir")->required();
  infer->add_option("--data", infer_data, "dataset root (or $OSLD_DATA_ROOT)");
  infer->add_option("--out", infer_out, "predictions csv path")->required();
  infer->add_option("--split", infer_split, "test | train")->capture_default_str();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "score predictions against annotations");
  std::string eval_pred, eval_data = detail::default_data_root(), eval_out;
  std::vector<double> eval_thresholds;
  evaluate->add_option("--pred", eval_pred, "predictions csv")->required();
  evaluate->add_option("--data", eval_data, "dataset root (or $OSLD_DATA_ROOT)");
  evaluate->add_option("--out", eval_out, "report output directory")->required();
  evaluate->add_option("--thresholds", eval_thresholds, "SDR thresholds in mm");

  // visualize
  auto* visualize = app.add_subcommand("visualize", "render prediction/ground-truth overlays");
  std::string vis_pred, vis_data = detail::default_data_root(), vis_out;
  visualize->add_option("--pred", vis_pred, "predictions csv")->required();
  visualize->add_option("--data", vis_data, "dataset root (or $OSLD_DATA_ROOT)");
  visualize->add_option("--out", vis_out, "overlay output directory")->required();

  std::vector<const char*> argv;
  argv.push_back("osld");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return 2;
    }

    if (synth->parsed()) {
      if (motif_style == "distinct") scfg.motif_style = MotifStyle::distinct;
      else if (motif_style == "paired") scfg.motif_style = MotifStyle::paired;
      else throw config_error("--motif-style must be 'distinct' or 'paired'");
      return cmd_synth_data(scfg, synth_out);
    }
    if (train->parsed()) {
      if (train_data.empty())
        throw config_error("no dataset given: pass --data or set OSLD_DATA_ROOT");
      if (!train_config.empty()) apply_config_file(rc, train_config);
      if (!train_mode.empty()) rc.train.mode = parse_train_mode(train_mode);
      if (opt_epochs >= 0) rc.train.epochs = static_cast<int>(opt_epochs);
      if (opt_seed >= 0) rc.train.seed = static_cast<std::uint64_t>(opt_seed);
      if (opt_jobs >= 0) rc.train.jobs = static_cast<int>(opt_jobs);
      if (opt_k >= 0) rc.train.num_landmarks = static_cast<int>(opt_k);
      if (opt_deterministic) rc.deterministic = true;
      return cmd_train(rc, train_data, train_out);
    }
    if (infer->parsed()) {
      if (infer_data.empty())
        throw config_error("no dataset given: pass --data or set OSLD_DATA_ROOT");
      return cmd_infer(infer_ckpt, infer_data, infer_out, infer_split);
    }
    if (evaluate->parsed()) {
      if (eval_data.empty())
        throw config_error("no dataset given: pass --data or set OSLD_DATA_ROOT");
      return cmd_evaluate(eval_pred, eval_data, eval_out, eval_thresholds);
    }
    if (visualize->parsed()) {
      if (vis_data.empty())
        throw config_error("no dataset given: pass --data or set OSLD_DATA_ROOT");
      return cmd_visualize(vis_pred, vis_data, vis_out);
    }
    return 2;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace osld::cli
