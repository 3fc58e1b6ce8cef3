#pragma once

#include <filesystem>
#include <functional>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "osld/nn/blob.hpp"
#include "osld/nn/conv.hpp"
#include "osld/nn/blocks.hpp"
#include "osld/rng.hpp"

namespace osld::nn {

// Frozen multi-scale feature extractor: any function image -> L feature
// maps with halving spatial sizes. Parameters never receive gradients.
template <typename T>
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual int levels() const = 0;
  virtual std::vector<int> channels() const = 0;
  virtual void forward(const Tensor<T>& x, Pyramid<T>& pyr) const = 0;

  // for self-contained checkpoints
  virtual void visit_params(
      const std::function<void(const std::string&, std::vector<T>&)>& fn) = 0;

  void check_input(const Tensor<T>& x) const {
    require(x.c == 1, "backbone: grayscale input expected");
    const int div = 1 << (levels() - 1);
    require(x.h % div == 0 && x.w % div == 0,
            "backbone: input size " + std::to_string(x.w) + "x" + std::to_string(x.h) +
                " not divisible by " + std::to_string(div));
  }
};

struct TinyBackboneConfig {
  std::vector<int> channels{16, 32, 64, 64, 64};
  std::uint64_t seed = 17;
};

// Seed-fixed random strided conv stack, one conv per level, stride 1 at
// the finest level then stride 2. The default test-time feature extractor.
template <typename T>
class TinyBackbone : public Backbone<T> {
 public:
  explicit TinyBackbone(TinyBackboneConfig cfg) : cfg_(std::move(cfg)) {
    require(!cfg_.channels.empty(), "tiny backbone: need at least one level");
    Rng rng(cfg_.seed);
    int in_c = 1;
    for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
      convs_.push_back(make_conv<T>(in_c, cfg_.channels[i], 3, i == 0 ? 1 : 2, 1));
      init_he(convs_.back(), rng);
      in_c = cfg_.channels[i];
    }
  }

  int levels() const override { return static_cast<int>(convs_.size()); }
  std::vector<int> channels() const override { return cfg_.channels; }
  const TinyBackboneConfig& config() const { return cfg_; }

  void forward(const Tensor<T>& x, Pyramid<T>& pyr) const override {
    this->check_input(x);
    pyr.assign(convs_.size(), Tensor<T>());
    const Tensor<T>* in = &x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      const auto& c = convs_[i];
      const int oh = conv_out_dim(in->h, c.k, c.stride, c.pad, c.dilation);
      const int ow = conv_out_dim(in->w, c.k, c.stride, c.pad, c.dilation);
      pyr[i] = Tensor<T>(c.out_c, oh, ow);
      conv_forward(c, *in, pyr[i].v.data(), oh, ow);
      relu_inplace(pyr[i].v.data(), pyr[i].size());
      in = &pyr[i];
    }
  }

  void visit_params(
      const std::function<void(const std::string&, std::vector<T>&)>& fn) override {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      fn("backbone.stage" + std::to_string(i + 1) + ".w", convs_[i].w);
      fn("backbone.stage" + std::to_string(i + 1) + ".b", convs_[i].b);
    }
  }

 private:
  TinyBackboneConfig cfg_;
  std::vector<Conv2d<T>> convs_;
};

// Frozen conv stack loaded from a weights directory:
//   manifest.json  {"input_channels": 1, "layers": [...]}
//   tensors/<name>.w.bin, tensors/<name>.b.bin   (little-endian float32)
// Layer kinds: conv (k/stride/pad/dilation/relu/name/out), maxpool (2x2/2),
// tap (emit current map as the next pyramid level). Exactly `levels` taps
// with halving spatial sizes are required; a pretrained VGG19 export fits
// this scheme with taps after each stage.
template <typename T>
class FileBackbone : public Backbone<T> {
 public:
  explicit FileBackbone(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw data_error("missing backbone manifest under " + dir);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw data_error(std::string("malformed backbone manifest: ") + e.what());
    }
    int in_c = j.value("input_channels", 1);
    for (const auto& layer : j.at("layers")) {
      const std::string type = layer.at("type").get<std::string>();
      Step step;
      if (type == "conv") {
        step.kind = Step::kConv;
        step.name = layer.at("name").get<std::string>();
        const int out_c = layer.at("out").get<int>();
        const int k = layer.value("k", 3);
        step.conv = make_conv<T>(in_c, out_c, k, layer.value("stride", 1),
                                 layer.value("pad", k / 2), layer.value("dilation", 1));
        step.relu = layer.value("relu", true);
        read_f32_blob(fs::path(dir) / "tensors" / (step.name + ".w.bin"),
                      step.conv.w.size(), step.conv.w);
        read_f32_blob(fs::path(dir) / "tensors" / (step.name + ".b.bin"),
                      step.conv.b.size(), step.conv.b);
        in_c = out_c;
      } else if (type == "maxpool") {
        step.kind = Step::kMaxpool;
      } else if (type == "tap") {
        step.kind = Step::kTap;
        channels_.push_back(in_c);
      } else {
        throw data_error("backbone manifest: unknown layer type '" + type + "'");
      }
      steps_.push_back(std::move(step));
    }
    if (channels_.empty()) throw data_error("backbone manifest: no tap layers");
  }

  int levels() const override { return static_cast<int>(channels_.size()); }
  std::vector<int> channels() const override { return channels_; }

  void forward(const Tensor<T>& x, Pyramid<T>& pyr) const override {
    this->check_input(x);
    pyr.clear();
    Tensor<T> cur = x;
    for (const auto& step : steps_) {
      switch (step.kind) {
        case Step::kConv: {
          const auto& c = step.conv;
          Tensor<T> out(c.out_c, conv_out_dim(cur.h, c.k, c.stride, c.pad, c.dilation),
                        conv_out_dim(cur.w, c.k, c.stride, c.pad, c.dilation));
          conv_forward(c, cur, out.v.data(), out.h, out.w);
          if (step.relu) relu_inplace(out.v.data(), out.size());
          cur = std::move(out);
          break;
        }
        case Step::kMaxpool: {
          Tensor<T> out(cur.c, cur.h / 2, cur.w / 2);
          for (int c = 0; c < cur.c; ++c)
            for (int y = 0; y < out.h; ++y)
              for (int xx = 0; xx < out.w; ++xx)
                out.at(c, y, xx) = std::max(
                    std::max(cur.at(c, 2 * y, 2 * xx), cur.at(c, 2 * y, 2 * xx + 1)),
                    std::max(cur.at(c, 2 * y + 1, 2 * xx), cur.at(c, 2 * y + 1, 2 * xx + 1)));
          cur = std::move(out);
          break;
        }
        case Step::kTap:
          pyr.push_back(cur);
          break;
      }
    }
    for (std::size_t i = 1; i < pyr.size(); ++i)
      require(pyr[i].h * 2 == pyr[i - 1].h && pyr[i].w * 2 == pyr[i - 1].w,
              "backbone taps do not form a halving pyramid");
  }

  void visit_params(
      const std::function<void(const std::string&, std::vector<T>&)>& fn) override {
    for (auto& step : steps_)
      if (step.kind == Step::kConv) {
        fn("backbone." + step.name + ".w", step.conv.w);
        fn("backbone." + step.name + ".b", step.conv.b);
      }
  }

 private:
  struct Step {
    enum Kind { kConv, kMaxpool, kTap } kind = kConv;
    std::string name;
    Conv2d<T> conv;
    bool relu = true;
  };
  std::vector<Step> steps_;
  std::vector<int> channels_;
};

}  // namespace osld::nn
