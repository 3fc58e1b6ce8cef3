#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "osld/nn/bank.hpp"

namespace osld::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam keyed by parameter name. Each parameter keeps its own step count,
// so adapters that only train on their own batches stay correctly
// bias-corrected.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }

  void step(const std::vector<ParamDesc<T>>& params) {
    for (const auto& p : params) {
      apply(p.name + ".w", p.conv->w, p.conv->gw);
      apply(p.name + ".b", p.conv->b, p.conv->gb);
    }
  }

 private:
  struct State {
    std::vector<T> m, v;
    std::int64_t t = 0;
  };

  void apply(const std::string& name, std::vector<T>& w, const std::vector<T>& g) {
    if (w.empty()) return;
    State& s = states_[name];
    if (s.m.empty()) {
      s.m.assign(w.size(), T(0));
      s.v.assign(w.size(), T(0));
    }
    require(s.m.size() == w.size(), "adam: parameter size changed under optimizer");
    s.t += 1;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t)));
    const T lr = static_cast<T>(cfg_.lr);
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < w.size(); ++i) {
      s.m[i] = b1 * s.m[i] + (T(1) - b1) * g[i];
      s.v[i] = b2 * s.v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = s.m[i] / c1;
      const T vhat = s.v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }

  AdamConfig cfg_;
  std::map<std::string, State> states_;
};

}  // namespace osld::nn
