#pragma once

#include <algorithm>
#include <atomic>
#include <memory>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "osld/augment.hpp"
#include "osld/dataset.hpp"
#include "osld/fast_path.hpp"
#include "osld/nn/adam.hpp"
#include "osld/nn/model.hpp"
#include "osld/ssl.hpp"

namespace osld {

enum class TrainMode { sla, sla_atd, adapter_atd };

inline const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::sla: return "sla";
    case TrainMode::sla_atd: return "sla_atd";
    case TrainMode::adapter_atd: return "adapter_atd";
  }
  return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "sla") return TrainMode::sla;
  if (s == "sla_atd") return TrainMode::sla_atd;
  if (s == "adapter_atd") return TrainMode::adapter_atd;
  throw config_error("unknown training mode '" + s + "'");
}

struct TrainConfig {
  TrainMode mode = TrainMode::sla_atd;
  int num_landmarks = 0;  // 0: take from the dataset
  int epochs = 300;
  int batch_size = 8;
  double learning_rate = 1e-4;
  std::string optimizer = "adam";
  std::uint64_t seed = 1;
  int input_size = 384;
  int patch_size = 192;
  int adapter_channels = 16;  // C_A
  int embed_dim = 128;        // E
  int template_aug_n = 500;
  CascadeConfig ssl;
  AffineAugParams aug;
  // network plan
  int levels = 5;
  std::vector<int> backbone_channels{16, 32, 64, 64, 64};
  std::vector<int> decoder_channels{64, 128, 256, 256};
  int rfb_channels = 256;
  int rfb_adapter_channels = -1;
  std::uint64_t backbone_seed = 17;
  std::string backbone_weights;  // directory of a frozen conv stack; empty = tiny random
  int jobs = 1;                  // parallel per-landmark trainings (sla modes)

  void validate() const {
    if (epochs < 1) throw config_error("epochs must be >= 1");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (optimizer != "adam") throw config_error("unsupported optimizer '" + optimizer + "'");
    if (template_aug_n < 1) throw config_error("template_aug_n must be >= 1");
    if (jobs < 1) throw config_error("jobs must be >= 1");
    const int div = 1 << (levels - 1);
    if (input_size % div != 0)
      throw config_error("input_size must be divisible by " + std::to_string(div));
    if (patch_size % div != 0)
      throw config_error("patch_size must be divisible by " + std::to_string(div));
    if (patch_size > input_size) throw config_error("patch_size larger than input_size");
    ssl.validate();
    aug.validate();
  }

  nn::BankConfig bank_config(int K, std::uint64_t init_seed) const {
    nn::BankConfig b;
    b.levels = levels;
    b.num_landmarks = K;
    b.adapter_channels = adapter_channels;
    b.embed_dim = embed_dim;
    b.backbone_channels = backbone_channels;
    b.decoder_channels = decoder_channels;
    b.rfb_channels = rfb_channels;
    b.rfb_adapter_channels = rfb_adapter_channels;
    b.init_seed = init_seed;
    return b;
  }
};

// Forward-only embedding source. The production implementation wraps a
// model; tests substitute oracles (e.g. positional codes) to exercise the
// inference plumbing in isolation.
template <typename T>
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual nn::Pyramid<T> embed_query(const ImageRecord<T>& rec, int k) const = 0;
  virtual CenterEmbeddings<T> embed_patch_centers(const Patch<T>& patch, int k) const = 0;
};

template <typename T>
class ModelEmbedder : public Embedder<T> {
 public:
  explicit ModelEmbedder(const nn::Model<T>& model) : model_(&model) {}

  nn::Pyramid<T> embed_query(const ImageRecord<T>& rec, int k) const override {
    return nn::embed_image(*model_, rec.resized, k);
  }

  CenterEmbeddings<T> embed_patch_centers(const Patch<T>& patch, int k) const override {
    return patch_center_embeddings(*model_, patch, k);
  }

 private:
  const nn::Model<T>* model_;
};

// One training pair: the loss ties the patch's center embeddings to the
// target cell of the query image at every level. With backward enabled,
// parameter gradients scaled by grad_scale accumulate into the bank.
template <typename T>
double sample_loss(nn::Model<T>& model, const Tensor<T>& query, const Patch<T>& patch,
                   const LandmarkPoint& target, int k, const CascadeConfig& cfg,
                   bool backward, double grad_scale = 1.0) {
  nn::DecoderTrace<T> qtrace, ptrace;
  auto qpyr = nn::embed_image(model, query, k, backward ? &qtrace : nullptr);
  auto ppyr = nn::embed_image(model, patch.pixels, k, backward ? &ptrace : nullptr);

  // raw center vectors, kept for the normalization backward
  const int L = static_cast<int>(ppyr.size());
  std::vector<std::vector<T>> raw(L);
  for (int i = 0; i < L; ++i) {
    const auto [cx, cy] = level_cell(patch.center_in_patch, i);
    require(cx >= 0 && cx < ppyr[i].w && cy >= 0 && cy < ppyr[i].h,
            "sample_loss: patch center outside level " + std::to_string(i + 1));
    raw[i].resize(ppyr[i].c);
    for (int c = 0; c < ppyr[i].c; ++c) raw[i][c] = ppyr[i].at(c, cy, cx);
  }
  auto centers = center_embeddings_from_pyramid(ppyr, patch.center_in_patch);

  SimilarityStack<T> stack = similarity_maps(qpyr, centers);
  stack.target = target;
  if (!backward) return ssl_training_loss(stack, cfg);

  std::vector<Tensor<T>> dmaps;
  const double loss = ssl_training_loss(stack, cfg, &dmaps);
  if (grad_scale != 1.0)
    for (auto& g : dmaps)
      for (auto& x : g.v) x = static_cast<T>(x * grad_scale);

  nn::Pyramid<T> dqpyr;
  std::vector<std::vector<T>> dcenters;
  similarity_backward(qpyr, centers, dmaps, dqpyr, dcenters);

  nn::Pyramid<T> dppyr(L);
  for (int i = 0; i < L; ++i) {
    dppyr[i] = Tensor<T>(ppyr[i].c, ppyr[i].h, ppyr[i].w);
    if (centers.flagged[i]) continue;
    const auto draw = normalize_backward(raw[i], dcenters[i]);
    const auto [cx, cy] = level_cell(patch.center_in_patch, i);
    for (int c = 0; c < ppyr[i].c; ++c) dppyr[i].at(c, cy, cx) = draw[c];
  }
  nn::decoder_backward(model.bank, qtrace, dqpyr, k);
  nn::decoder_backward(model.bank, ptrace, dppyr, k);
  return loss;
}

struct StageResult {
  double mean_loss = 0.0;
  int steps = 0;
  int samples = 0;
};

// Landmark ids for a run of batches in joint adapter training: one id per
// batch, sampled uniformly.
inline std::vector<int> draw_batch_landmarks(Rng& rng, int n_batches, int K) {
  std::vector<int> out(n_batches);
  for (auto& k : out) k = static_cast<int>(rng.uniform_int(0, K - 1));
  return out;
}

namespace detail {

template <typename T>
struct StageItem {
  const Tensor<T>* query = nullptr;
  const std::string* id = nullptr;
};

// Shared batch loop of Train-Template and Train-PL. fixed_k >= 0 pins the
// landmark (single-landmark training); fixed_k < 0 samples one landmark
// id per batch (joint adapter training). target_for(item_index, k) yields
// the crop center / loss target.
template <typename T, typename TargetFn>
StageResult run_stage_batches(nn::Model<T>& model, nn::Adam<T>& adam,
                              const std::vector<StageItem<T>>& items, TargetFn&& target_for,
                              const TrainConfig& cfg, nn::TrainScope scope, int fixed_k,
                              Rng& rng) {
  StageResult res;
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1],
              order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

  const int n_batches =
      static_cast<int>((items.size() + cfg.batch_size - 1) / cfg.batch_size);
  std::vector<int> batch_k;
  if (fixed_k < 0)
    batch_k = draw_batch_landmarks(rng, n_batches, model.bank.cfg.num_landmarks);

  double loss_sum = 0.0;
  for (int batch = 0; batch < n_batches; ++batch) {
    const std::size_t begin = static_cast<std::size_t>(batch) * cfg.batch_size;
    const std::size_t end = std::min(items.size(), begin + cfg.batch_size);
    const int k = fixed_k >= 0 ? fixed_k : batch_k[batch];
    nn::zero_bank_grads(model.bank);
    const double scale = 1.0 / static_cast<double>(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const auto& item = items[order[i]];
      const LandmarkPoint target = target_for(order[i], k);
      auto patch = crop_patch(*item.query, *item.id, target, cfg.patch_size);
      patch = augment_patch(patch, cfg.aug, rng.next());
      loss_sum +=
          windowed_sample_loss(model, *item.query, patch, target, k, cfg.ssl, true, scale);
      ++res.samples;
    }
    adam.step(nn::trainable_parameters(model.bank, scope, scope == nn::TrainScope::sla ? -1 : k));
    ++res.steps;
  }
  res.mean_loss = res.samples ? loss_sum / res.samples : 0.0;
  return res;
}

}  // namespace detail

// Train-Template (the ATD stage): one pass over the augmented template
// set; crop targets are the items' transformed ground-truth landmarks.
template <typename T>
StageResult train_template_stage(nn::Model<T>& model, nn::Adam<T>& adam,
                                 const TemplateSet<T>& templates, const TrainConfig& cfg,
                                 nn::TrainScope scope, int fixed_k, Rng& rng) {
  require(!templates.items.empty(), "train_template_stage: empty template set");
  static const std::string kTemplateId = "template";
  std::vector<detail::StageItem<T>> items;
  items.reserve(templates.items.size());
  for (const auto& item : templates.items)
    items.push_back({&item.image, &kTemplateId});
  return detail::run_stage_batches(
      model, adam, items,
      [&](std::size_t i, int k) { return templates.items[i].landmarks[k]; }, cfg, scope,
      fixed_k, rng);
}

// Train-PL: identical mechanics, but crop targets come out of the
// pseudo-label store. expected_stamp enforces the epoch barrier: Train-PL
// of epoch e must observe the store as Infer-PL of epoch e-1 left it.
template <typename T>
StageResult train_pl_stage(nn::Model<T>& model, nn::Adam<T>& adam,
                           const std::vector<ImageRecord<T>>& train_images,
                           const PseudoLabelStore& store, const TrainConfig& cfg,
                           nn::TrainScope scope, int fixed_k, Rng& rng,
                           std::int64_t expected_stamp = -1) {
  require(!train_images.empty(), "train_pl_stage: no training images");
  if (expected_stamp >= 0)
    require(store.epoch_stamp() == expected_stamp,
            "train_pl_stage: epoch barrier violated (stamp " +
                std::to_string(store.epoch_stamp()) + ", expected " +
                std::to_string(expected_stamp) + ")");
  std::vector<detail::StageItem<T>> items;
  items.reserve(train_images.size());
  for (const auto& rec : train_images) items.push_back({&rec.resized, &rec.id});
  return detail::run_stage_batches(
      model, adam, items,
      [&](std::size_t i, int k) { return store.get(train_images[i].id, k); }, cfg, scope,
      fixed_k, rng);
}

struct InferPlStats {
  int clamped = 0;
};

// Infer-PL: crop the template patch at landmark k's ground truth (no
// augmentation), embed once, then re-localize the landmark on every
// training image by cascade similarity. Predictions are clamped into the
// croppable region (counted) so the store invariant holds.
template <typename T>
InferPlStats infer_pl_stage(const Embedder<T>& embedder, const ImageRecord<T>& tpl,
                            const std::vector<ImageRecord<T>>& train_images, int k,
                            const CascadeConfig& cfg, int patch_size,
                            PseudoLabelStore& store) {
  const LandmarkPoint gt = gt_resized(tpl, k);
  const auto tpatch = crop_patch(tpl.resized, tpl.id, gt, patch_size);
  const auto centers = embedder.embed_patch_centers(tpatch, k);
  InferPlStats stats;
  for (const auto& rec : train_images) {
    auto stack = similarity_maps(embedder.embed_query(rec, k), centers);
    const LandmarkPoint raw = cascade_infer(stack, cfg);
    const LandmarkPoint clamped = store.region().clamp(raw);
    if (clamped.x != raw.x || clamped.y != raw.y) ++stats.clamped;
    store.set(rec.id, k, clamped);
  }
  return stats;
}

template <typename T>
InferPlStats infer_pl_stage(const nn::Model<T>& model, const ImageRecord<T>& tpl,
                            const std::vector<ImageRecord<T>>& train_images, int k,
                            const CascadeConfig& cfg, int patch_size,
                            PseudoLabelStore& store) {
  return infer_pl_stage(ModelEmbedder<T>(model), tpl, train_images, k, cfg, patch_size,
                        store);
}

struct EpochLog {
  int epoch = 0;
  int k = -1;  // -1: joint adapter model
  double train_template_loss = 0.0;
  double train_pl_loss = 0.0;
  int infer_pl_clamped = 0;
};

template <typename T>
struct TrainedModel {
  int k = -1;  // landmark id for sla modes, -1 for the joint model
  nn::Model<T> model;
  PseudoLabelStore store;
};

template <typename T>
struct TrainResult {
  std::vector<TrainedModel<T>> models;
  std::vector<EpochLog> log;
};

namespace detail {

template <typename T>
std::shared_ptr<nn::Backbone<T>> make_backbone(const TrainConfig& cfg) {
  if (!cfg.backbone_weights.empty())
    return std::make_shared<nn::FileBackbone<T>>(cfg.backbone_weights);
  nn::TinyBackboneConfig bc;
  bc.channels = cfg.backbone_channels;
  bc.seed = cfg.backbone_seed;
  return std::make_shared<nn::TinyBackbone<T>>(bc);
}

inline void init_pseudo_labels(PseudoLabelStore& store,
                               const std::vector<std::string>& image_ids,
                               const std::vector<int>& landmark_ids, Rng& rng) {
  const auto& region = store.region();
  for (const auto& id : image_ids)
    for (int k : landmark_ids) {
      const double x = static_cast<double>(rng.uniform_int(region.margin, region.width - region.margin));
      const double y = static_cast<double>(rng.uniform_int(region.margin, region.height - region.margin));
      store.set(id, k, {x, y, Frame::resized});
    }
}

}  // namespace detail

// One single-landmark model (K=1 bank, adapter id 0), trained on landmark
// `k` of the dataset. Derives every random stream from (cfg.seed, k), so
// results do not depend on the order the K models run in.
template <typename T>
TrainedModel<T> train_single_landmark(const DatasetSplit<T>& data, const TrainConfig& cfg,
                                      int k, std::shared_ptr<nn::Backbone<T>> backbone,
                                      std::vector<EpochLog>* log = nullptr) {
  require(k >= 0 && k < data.num_landmarks, "train_single_landmark: bad landmark id");
  auto bank = nn::build_bank<T>(cfg.bank_config(1, mix_seed(cfg.seed, 101 + k)));
  auto model = nn::make_model<T>(std::move(backbone), std::move(bank));
  nn::Adam<T> adam({cfg.learning_rate});

  Rng rng(mix_seed(cfg.seed, 7700 + k));
  PseudoLabelStore store(cfg.input_size, cfg.patch_size);
  std::vector<std::string> ids;
  for (const auto& rec : data.train) ids.push_back(rec.id);
  detail::init_pseudo_labels(store, ids, {0}, rng);

  // landmark k of the dataset maps to adapter slot 0 of this model; the
  // template record, the augmented template set and the store all carry
  // their data under slot 0
  ImageRecord<T> tpl = data.template_image;
  tpl.ground_truth = std::vector<LandmarkPoint>{(*data.template_image.ground_truth)[k]};

  TemplateSet<T> templates;
  if (cfg.mode == TrainMode::sla_atd)
    templates = build_augmented_template_set(tpl, cfg.aug, cfg.template_aug_n,
                                             cfg.patch_size, mix_seed(cfg.seed, 3300 + k));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    entry.k = k;
    if (cfg.mode == TrainMode::sla_atd) {
      const auto tt = train_template_stage(model, adam, templates, cfg,
                                           nn::TrainScope::sla, 0, rng);
      entry.train_template_loss = tt.mean_loss;
    }
    const auto tp = train_pl_stage(model, adam, data.train, store, cfg,
                                   nn::TrainScope::sla, 0, rng, epoch - 1);
    entry.train_pl_loss = tp.mean_loss;
    const auto ip = infer_pl_stage(model, tpl, data.train, 0, cfg.ssl, cfg.patch_size, store);
    store.set_epoch_stamp(epoch);
    entry.infer_pl_clamped = ip.clamped;
    if (log) log->push_back(entry);
  }
  return TrainedModel<T>{k, std::move(model), std::move(store)};
}

// One joint model with K adapters. Each training batch samples a single
// landmark id; Infer-PL refreshes the store for every landmark.
template <typename T>
TrainedModel<T> train_adapter_model(const DatasetSplit<T>& data, const TrainConfig& cfg,
                                    std::shared_ptr<nn::Backbone<T>> backbone,
                                    std::vector<EpochLog>* log = nullptr) {
  const int K = data.num_landmarks;
  auto bank = nn::build_bank<T>(cfg.bank_config(K, mix_seed(cfg.seed, 99)));
  auto model = nn::make_model<T>(std::move(backbone), std::move(bank));
  nn::Adam<T> adam({cfg.learning_rate});

  Rng rng(mix_seed(cfg.seed, 7600));
  PseudoLabelStore store(cfg.input_size, cfg.patch_size);
  std::vector<std::string> ids;
  for (const auto& rec : data.train) ids.push_back(rec.id);
  std::vector<int> all_k(K);
  std::iota(all_k.begin(), all_k.end(), 0);
  detail::init_pseudo_labels(store, ids, all_k, rng);

  const auto templates = build_augmented_template_set(
      data.template_image, cfg.aug, cfg.template_aug_n, cfg.patch_size,
      mix_seed(cfg.seed, 3300));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    const auto tt = train_template_stage(model, adam, templates, cfg,
                                         nn::TrainScope::adapter, -1, rng);
    entry.train_template_loss = tt.mean_loss;
    const auto tp = train_pl_stage(model, adam, data.train, store, cfg,
                                   nn::TrainScope::adapter, -1, rng, epoch - 1);
    entry.train_pl_loss = tp.mean_loss;
    for (int k = 0; k < K; ++k) {
      const auto ip = infer_pl_stage(model, data.template_image, data.train, k, cfg.ssl,
                                     cfg.patch_size, store);
      entry.infer_pl_clamped += ip.clamped;
    }
    store.set_epoch_stamp(epoch);
    if (log) log->push_back(entry);
  }
  return TrainedModel<T>{-1, std::move(model), std::move(store)};
}

// Fig. 1 orchestration over the whole dataset. sla modes train K
// independent single-adapter models (optionally in parallel: disjoint
// state, deterministic per-model seeds); adapter_atd trains one joint
// model.
template <typename T>
TrainResult<T> run_training(const DatasetSplit<T>& data, const TrainConfig& cfg) {
  cfg.validate();
  const int K = data.num_landmarks;
  require(K >= 1, "run_training: dataset has no landmarks");
  if (cfg.num_landmarks != 0)
    require(cfg.num_landmarks == K, "run_training: config K (" +
                                        std::to_string(cfg.num_landmarks) +
                                        ") does not match dataset K (" + std::to_string(K) +
                                        ")");
  require(data.template_image.ground_truth.has_value() &&
              static_cast<int>(data.template_image.ground_truth->size()) == K,
          "run_training: template ground truth missing or wrong arity");

  auto backbone = detail::make_backbone<T>(cfg);
  TrainResult<T> result;
  if (cfg.mode == TrainMode::adapter_atd) {
    result.models.push_back(train_adapter_model(data, cfg, backbone, &result.log));
    return result;
  }

  result.models.resize(K);
  std::vector<std::vector<EpochLog>> logs(K);
  const int jobs = std::min(cfg.jobs, K);
  if (jobs <= 1) {
    for (int k = 0; k < K; ++k)
      result.models[k] = train_single_landmark(data, cfg, k, backbone, &logs[k]);
  } else {
    std::vector<std::thread> workers;
    std::atomic<int> next{0};
    for (int j = 0; j < jobs; ++j)
      workers.emplace_back([&] {
        for (;;) {
          const int k = next.fetch_add(1);
          if (k >= K) return;
          result.models[k] = train_single_landmark(data, cfg, k, backbone, &logs[k]);
        }
      });
    for (auto& w : workers) w.join();
  }
  for (auto& l : logs)
    result.log.insert(result.log.end(), l.begin(), l.end());
  return result;
}

}  // namespace osld
