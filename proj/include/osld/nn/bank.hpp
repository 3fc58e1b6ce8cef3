#pragma once

#include <functional>
#include <string>
#include <vector>

#include "osld/nn/blocks.hpp"
#include "osld/nn/upsample.hpp"

namespace osld::nn {

// Channel plan of the adapter decoder. decoder_channels are the shared
// widths C' for levels 1..levels-1 (finest first); every adapter adds
// adapter_channels on top. Level `levels` is the raw deepest backbone map.
struct BankConfig {
  int levels = 5;
  int num_landmarks = 1;                            // K
  int adapter_channels = 16;                        // C_A
  int embed_dim = 128;                              // E
  std::vector<int> backbone_channels{16, 32, 64, 64, 64};
  std::vector<int> decoder_channels{64, 128, 256, 256};
  int rfb_channels = 256;
  int rfb_adapter_channels = -1;                    // -1: same as adapter_channels
  std::vector<int> rfb_dilations{1, 3, 5};
  std::uint64_t init_seed = 1;

  int rfb_adapter_out() const {
    return rfb_adapter_channels < 0 ? adapter_channels : rfb_adapter_channels;
  }

  void validate() const {
    if (levels < 2 || levels > 5)
      throw config_error("bank: levels must be in [2, 5]");
    if (num_landmarks < 1) throw config_error("bank: K must be >= 1");
    if (adapter_channels < 0) throw config_error("bank: C_A must be >= 0");
    if (embed_dim < 1) throw config_error("bank: embed_dim must be >= 1");
    if (static_cast<int>(backbone_channels.size()) != levels)
      throw config_error("bank: backbone_channels must have one entry per level");
    if (static_cast<int>(decoder_channels.size()) != levels - 1)
      throw config_error("bank: decoder_channels must have levels-1 entries");
    for (int c : backbone_channels)
      if (c < 1) throw config_error("bank: backbone channels must be >= 1");
    for (int c : decoder_channels)
      if (c < 1) throw config_error("bank: decoder channels must be >= 1");
    if (levels >= 3 && rfb_channels < 1)
      throw config_error("bank: rfb_channels must be >= 1");
  }
};

// The full trainable stack of the landmark decoder: one shared path plus
// K landmark-specific adapter paths. Parameters partition into
// {shared} u {adapter_k}_{k=1..K}; the frozen backbone lives outside.
template <typename T>
struct AdapterBank {
  BankConfig cfg;
  std::vector<AdapterConvBlock<T>> blocks;  // levels 1..levels-1, finest first
  std::vector<RFBAdapterBlock<T>> rfbs;     // levels 3..levels
  std::vector<Conv2d<T>> heads;             // 1x1 embedding heads, shared across landmarks

  // channels of F_c at a level (1-based)
  int fc_channels(int level) const {
    if (level == cfg.levels) return cfg.backbone_channels[cfg.levels - 1];
    return cfg.decoder_channels[level - 1] + cfg.adapter_channels;
  }
};

enum class ParamGroup { shared, adapter };

// One conv's worth of parameters with its ownership tag.
template <typename T>
struct ParamDesc {
  std::string name;
  ParamGroup group = ParamGroup::shared;
  int adapter_id = -1;
  Conv2d<T>* conv = nullptr;
};

template <typename T, typename Fn>
void visit_bank_params(AdapterBank<T>& bank, Fn&& fn) {
  auto emit = [&fn](std::string name, ParamGroup g, int id, Conv2d<T>& c) {
    fn(ParamDesc<T>{std::move(name), g, id, &c});
  };
  for (std::size_t i = 0; i < bank.blocks.size(); ++i) {
    const std::string base = "dec" + std::to_string(i + 1) + ".";
    emit(base + "shared", ParamGroup::shared, -1, bank.blocks[i].shared);
    for (std::size_t k = 0; k < bank.blocks[i].adapters.size(); ++k)
      emit(base + "adapter" + std::to_string(k), ParamGroup::adapter, static_cast<int>(k),
           bank.blocks[i].adapters[k]);
  }
  for (std::size_t i = 0; i < bank.rfbs.size(); ++i) {
    const std::string base = "rfb" + std::to_string(i + 3) + ".";
    auto emit_path = [&](const std::string& pbase, ParamGroup g, int id, RFBPath<T>& path) {
      if (path.out_channels() == 0) return;
      for (std::size_t b = 0; b < path.reduce.size(); ++b) {
        emit(pbase + ".reduce" + std::to_string(b), g, id, path.reduce[b]);
        emit(pbase + ".dilated" + std::to_string(b), g, id, path.dilated[b]);
      }
      emit(pbase + ".project", g, id, path.project);
    };
    emit_path(base + "shared", ParamGroup::shared, -1, bank.rfbs[i].shared);
    for (std::size_t k = 0; k < bank.rfbs[i].adapters.size(); ++k)
      emit_path(base + "adapter" + std::to_string(k), ParamGroup::adapter,
                static_cast<int>(k), bank.rfbs[i].adapters[k]);
  }
  for (std::size_t i = 0; i < bank.heads.size(); ++i)
    emit("head" + std::to_string(i + 1), ParamGroup::shared, -1, bank.heads[i]);
}

template <typename T>
AdapterBank<T> build_bank(const BankConfig& cfg) {
  cfg.validate();
  AdapterBank<T> bank;
  bank.cfg = cfg;
  for (int level = 1; level <= cfg.levels - 1; ++level) {
    const int in_c = bank.fc_channels(level + 1) + cfg.backbone_channels[level - 1];
    bank.blocks.push_back(make_adapter_conv_block<T>(
        in_c, cfg.decoder_channels[level - 1], cfg.adapter_channels, cfg.num_landmarks));
  }
  for (int level = 3; level <= cfg.levels; ++level)
    bank.rfbs.push_back(make_rfb_adapter_block<T>(bank.fc_channels(level), cfg.rfb_channels,
                                                  cfg.rfb_adapter_out(), cfg.num_landmarks,
                                                  cfg.rfb_dilations));
  for (int level = 1; level <= cfg.levels; ++level) {
    const int in_c = level <= 2 ? bank.fc_channels(level)
                                : cfg.rfb_channels + cfg.rfb_adapter_out();
    bank.heads.push_back(make_conv<T>(in_c, cfg.embed_dim, 1));
  }

  Rng rng(cfg.init_seed);
  visit_bank_params<T>(bank, [&rng](const ParamDesc<T>& p) {
    if (p.conv->w.empty()) return;
    init_he(*p.conv, rng);
  });
  return bank;
}

enum class TrainScope { sla, adapter };

// sla: the whole non-backbone bank of a K=1 single-landmark model.
// adapter: shared parameters plus adapter k only. The backbone is never
// part of the bank, so it can never appear here.
template <typename T>
std::vector<ParamDesc<T>> trainable_parameters(AdapterBank<T>& bank, TrainScope scope,
                                               int k = -1) {
  if (scope == TrainScope::sla)
    require(bank.cfg.num_landmarks == 1, "trainable_parameters: sla scope expects a K=1 bank");
  if (scope == TrainScope::adapter)
    require(k >= 0 && k < bank.cfg.num_landmarks,
            "trainable_parameters: adapter scope requires a valid landmark id");
  std::vector<ParamDesc<T>> out;
  visit_bank_params(bank, [&](const ParamDesc<T>& p) {
    if (p.conv->w.empty()) return;
    if (p.group == ParamGroup::shared) {
      out.push_back(p);
    } else if (scope == TrainScope::sla || p.adapter_id == k) {
      out.push_back(p);
    }
  });
  return out;
}

template <typename T>
void zero_bank_grads(AdapterBank<T>& bank) {
  visit_bank_params(bank, [](const ParamDesc<T>& p) { zero_grad(*p.conv); });
}

template <typename T>
struct DecoderTrace {
  std::vector<Tensor<T>> concat_in;          // block inputs, levels 1..L-1
  std::vector<Tensor<T>> f_c;                // post-block maps, levels 1..L (1-based idx-1)
  std::vector<RFBBlockTrace<T>> rfb_traces;  // levels 3..L
  std::vector<Tensor<T>> rfb_out;            // levels 3..L
};

// Eqs of the decoder: F_c^L = F_v^L; for i = L-1..1,
// F_c^i = block_i(concat(up2x(F_c^{i+1}), F_v^i), k); RFB on levels >= 3;
// heads read F_c (levels 1-2) or the RFB output (levels >= 3).
template <typename T>
Pyramid<T> decoder_forward(const AdapterBank<T>& bank, const Pyramid<T>& pyr, int k,
                           DecoderTrace<T>* trace = nullptr) {
  const int L = bank.cfg.levels;
  require(static_cast<int>(pyr.size()) == L, "decoder_forward: pyramid level mismatch");
  for (int i = 0; i < L; ++i)
    require(pyr[i].c == bank.cfg.backbone_channels[i],
            "decoder_forward: backbone channel mismatch at level " + std::to_string(i + 1));
  require(k >= 0 && k < bank.cfg.num_landmarks, "decoder_forward: bad landmark id");

  DecoderTrace<T> local;
  DecoderTrace<T>& tr = trace ? *trace : local;
  tr.concat_in.assign(L - 1, Tensor<T>());
  tr.f_c.assign(L, Tensor<T>());
  tr.rfb_traces.assign(std::max(0, L - 2), RFBBlockTrace<T>());
  tr.rfb_out.assign(std::max(0, L - 2), Tensor<T>());

  tr.f_c[L - 1] = pyr[L - 1];
  for (int level = L - 1; level >= 1; --level) {
    Tensor<T> up;
    upsample2x_forward(tr.f_c[level], up);  // f_c of level+1 (0-based level)
    const Tensor<T>& skip = pyr[level - 1];
    require(up.h == skip.h && up.w == skip.w,
            "decoder_forward: spatial mismatch at level " + std::to_string(level));
    Tensor<T>& cat = tr.concat_in[level - 1];
    cat = Tensor<T>(up.c + skip.c, up.h, up.w);
    std::copy(up.v.begin(), up.v.end(), cat.v.begin());
    std::copy(skip.v.begin(), skip.v.end(), cat.v.begin() + up.size());
    adapter_conv_forward(bank.blocks[level - 1], cat, k, tr.f_c[level - 1]);
  }
  for (int level = 3; level <= L; ++level)
    rfb_adapter_forward(bank.rfbs[level - 3], tr.f_c[level - 1], k, tr.rfb_out[level - 3],
                        &tr.rfb_traces[level - 3]);

  Pyramid<T> emb(L);
  for (int level = 1; level <= L; ++level) {
    const Tensor<T>& in = level <= 2 ? tr.f_c[level - 1] : tr.rfb_out[level - 3];
    emb[level - 1] = Tensor<T>(bank.cfg.embed_dim, in.h, in.w);
    conv_forward(bank.heads[level - 1], in, emb[level - 1].v.data(), in.h, in.w);
  }
  return emb;
}

// Backward through the decoder DAG. d_emb matches the embedding pyramid;
// parameter gradients accumulate into the bank, gradients into the frozen
// backbone features are dropped.
template <typename T>
void decoder_backward(AdapterBank<T>& bank, const DecoderTrace<T>& tr,
                      const Pyramid<T>& d_emb, int k) {
  const int L = bank.cfg.levels;
  require(static_cast<int>(d_emb.size()) == L, "decoder_backward: gradient level mismatch");

  std::vector<Tensor<T>> dfc(L);
  for (int i = 0; i < L; ++i) dfc[i] = Tensor<T>(tr.f_c[i].c, tr.f_c[i].h, tr.f_c[i].w);

  for (int level = 1; level <= L; ++level) {
    if (level <= 2) {
      conv_backward(bank.heads[level - 1], tr.f_c[level - 1], d_emb[level - 1].v.data(),
                    d_emb[level - 1].h, d_emb[level - 1].w, &dfc[level - 1]);
    } else {
      const Tensor<T>& rfb_out = tr.rfb_out[level - 3];
      Tensor<T> drfb(rfb_out.c, rfb_out.h, rfb_out.w);
      conv_backward(bank.heads[level - 1], rfb_out, d_emb[level - 1].v.data(),
                    d_emb[level - 1].h, d_emb[level - 1].w, &drfb);
      rfb_adapter_backward(bank.rfbs[level - 3], tr.f_c[level - 1],
                           tr.rfb_traces[level - 3], drfb, k, &dfc[level - 1]);
    }
  }
  for (int level = 1; level <= L - 1; ++level) {
    const Tensor<T>& cat = tr.concat_in[level - 1];
    Tensor<T> dcat(cat.c, cat.h, cat.w);
    adapter_conv_backward(bank.blocks[level - 1], cat, tr.f_c[level - 1], dfc[level - 1], k,
                          &dcat);
    // first up_c channels of the concat came from up2x(F_c^{level+1})
    const int up_c = tr.f_c[level].c;
    Tensor<T> dup(up_c, dcat.h, dcat.w);
    std::copy(dcat.v.begin(), dcat.v.begin() + dup.size(), dup.v.begin());
    upsample2x_backward(dup, dfc[level]);
    // remaining channels are the frozen backbone skip: dropped
  }
}

}  // namespace osld::nn
