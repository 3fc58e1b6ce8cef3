#pragma once

#include <memory>

#include "osld/nn/backbone.hpp"
#include "osld/nn/bank.hpp"

namespace osld::nn {

// Frozen backbone plus the trainable adapter bank.
template <typename T>
struct Model {
  std::shared_ptr<Backbone<T>> backbone;
  AdapterBank<T> bank;
};

template <typename T>
Model<T> make_model(std::shared_ptr<Backbone<T>> backbone, AdapterBank<T> bank) {
  require(backbone != nullptr, "make_model: null backbone");
  require(backbone->levels() == bank.cfg.levels,
          "make_model: backbone and bank disagree on pyramid depth");
  require(backbone->channels() == bank.cfg.backbone_channels,
          "make_model: backbone and bank disagree on channel plan");
  return Model<T>{std::move(backbone), std::move(bank)};
}

template <typename T>
Pyramid<T> backbone_forward(const Model<T>& model, const Tensor<T>& x) {
  Pyramid<T> pyr;
  model.backbone->forward(x, pyr);
  return pyr;
}

// image -> embedding pyramid for the active landmark
template <typename T>
Pyramid<T> embed_image(const Model<T>& model, const Tensor<T>& x, int k,
                       DecoderTrace<T>* trace = nullptr) {
  return decoder_forward(model.bank, backbone_forward(model, x), k, trace);
}

}  // namespace osld::nn
