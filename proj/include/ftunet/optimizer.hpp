#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ftunet/network.hpp"

namespace ftunet {

struct AdamSettings {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moments keyed by tensor name ("<layer>.kernel").
struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, std::vector<float>> first_moment;
  std::map<std::string, std::vector<float>> second_moment;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

namespace detail {

template <class T>
void adam_update(std::vector<T>& w, const std::vector<T>& g, std::vector<float>& m, std::vector<float>& v,
                 const AdamSettings& s, double bc1, double bc2) {
  if (m.size() != w.size()) m.assign(w.size(), 0.0f);
  if (v.size() != w.size()) v.assign(w.size(), 0.0f);
  const float b1 = static_cast<float>(s.beta1), b2 = static_cast<float>(s.beta2);
  const double step = s.learning_rate / bc1;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const float gj = static_cast<float>(g[j]);
    m[j] = b1 * m[j] + (1.0f - b1) * gj;
    v[j] = b2 * v[j] + (1.0f - b2) * gj * gj;
    const double denom = std::sqrt(static_cast<double>(v[j]) / bc2) + s.epsilon;
    w[j] = static_cast<T>(static_cast<double>(w[j]) - step * static_cast<double>(m[j]) / denom);
  }
}

}  // namespace detail

// One Adam step over the trainable layers. Frozen layers are never written.
template <class T>
void adam_step(Network<T>& net, const ParamList<T>& grads, AdamState& state, const AdamSettings& s) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
  const auto& layers = net.graph().layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!has_parameters(layers[i].kind) || !layers[i].trainable) continue;
    auto& p = net.params()[i];
    const std::string k = layers[i].name + ".kernel", b = layers[i].name + ".bias";
    detail::adam_update(p.kernel, grads[i].kernel, state.first_moment[k], state.second_moment[k], s, bc1, bc2);
    detail::adam_update(p.bias, grads[i].bias, state.first_moment[b], state.second_moment[b], s, bc1, bc2);
  }
}

}  // namespace ftunet
