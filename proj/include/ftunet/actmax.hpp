#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftunet/checkpoint.hpp"
#include "ftunet/error.hpp"
#include "ftunet/network.hpp"
#include "ftunet/random.hpp"

namespace ftunet {

struct ActMaxConfig {
  int layer_index = 1;  // 1-based conv3x3 ordinal
  int unit_index = 0;   // 0-based filter within that layer
  int steps = 512;
  double step_size = 0.1;
  std::uint64_t seed = 0;
  double regularization_weight = 1e-3;

  void validate(const std::string& field = "activation") const {
    if (steps < 0) throw ConfigError(field + ".steps: must be >= 0");
    if (!(step_size > 0)) throw ConfigError(field + ".step_size: must be positive");
    if (regularization_weight < 0) throw ConfigError(field + ".regularization_weight: must be nonnegative");
  }
};

inline void to_json(nlohmann::json& j, const ActMaxConfig& c) {
  j = nlohmann::json{{"layer_index", c.layer_index}, {"unit_index", c.unit_index}, {"steps", c.steps},
                     {"step_size", c.step_size},     {"seed", c.seed},
                     {"regularization_weight", c.regularization_weight}};
}

struct ActMaxResult {
  ImageTensor image;
  std::vector<double> trace;  // unit activation before each step, then after the last
};

// Spatial-mean pre-activation of one filter of one conv3x3 layer.
class ActivationProbe {
 public:
  ActivationProbe(const ModelGraph& graph, const Checkpoint& ckpt) : net_(graph) {
    restore(net_, ckpt);
  }

  int layer_of(int ordinal, int unit) const {
    const int li = net_.graph().conv_layer(ordinal);
    if (li < 0)
      throw ArgumentError("layer_index " + std::to_string(ordinal) + " outside [1, " +
                          std::to_string(net_.graph().conv3x3_count()) + "]");
    const int units = net_.graph().layers[li].out_channels;
    if (unit < 0 || unit >= units)
      throw ArgumentError("unit_index " + std::to_string(unit) + " outside [0, " + std::to_string(units) + ")");
    return li;
  }

  double activation(const ImageTensor& image, int ordinal, int unit, Workspace<float>& ws) const {
    const int li = layer_of(ordinal, unit);
    check_input(image);
    ForwardOptions opt;
    opt.stop_after = li;
    net_.forward(image, ws, opt);
    return mean_channel(ws.preactivations[li], unit);
  }
  double activation(const ImageTensor& image, int ordinal, int unit) const {
    Workspace<float> ws;
    return activation(image, ordinal, unit, ws);
  }

  // Activation and its gradient with respect to the input image.
  double gradient(const ImageTensor& image, int ordinal, int unit, Workspace<float>& ws, ImageTensor& grad) const {
    const int li = layer_of(ordinal, unit);
    const double a = activation(image, ordinal, unit, ws);
    const Tensor<float>& z = ws.preactivations[li];
    Tensor<float> seed(z.shape);
    const float w = 1.0f / static_cast<float>(z.shape.pixels());
    for (std::size_t px = 0; px < z.shape.pixels(); ++px) seed.values[px * z.channels() + unit] = w;
    grad = net_.backward(ws, li, seed, nullptr, true);
    return a;
  }

  const Network<float>& network() const { return net_; }

 private:
  void check_input(const ImageTensor& image) const {
    if (image.shape != net_.graph().input_shape()) throw ArgumentError("image shape does not match the network input");
  }
  static double mean_channel(const Tensor<float>& z, int unit) {
    double s = 0.0;
    for (std::size_t px = 0; px < z.shape.pixels(); ++px) s += z.values[px * z.channels() + unit];
    return s / static_cast<double>(z.shape.pixels());
  }

  Network<float> net_;
};

// Uniform noise in [0,1], the starting point and the random baseline.
inline ImageTensor random_input(Shape3 shape, std::uint64_t seed) {
  ImageTensor x(shape);
  Rng rng(derive_seed({seed, hash_string("actmax-init")}));
  for (auto& v : x.values) v = static_cast<float>(rng.uniform());
  return x;
}

namespace detail {

// Mean anisotropic total variation and its subgradient.
inline double total_variation(const ImageTensor& x, ImageTensor* grad) {
  const int h = x.height(), w = x.width(), c = x.channels();
  double tv = 0.0;
  const double n = static_cast<double>(x.size());
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int ch = 0; ch < c; ++ch) {
        const float v = x.at(y, xx, ch);
        if (xx + 1 < w) {
          const float d = x.at(y, xx + 1, ch) - v;
          tv += std::abs(d);
          if (grad) {
            const float g = static_cast<float>(((d > 0) - (d < 0)) / n);
            grad->at(y, xx + 1, ch) += g;
            grad->at(y, xx, ch) -= g;
          }
        }
        if (y + 1 < h) {
          const float d = x.at(y + 1, xx, ch) - v;
          tv += std::abs(d);
          if (grad) {
            const float g = static_cast<float>(((d > 0) - (d < 0)) / n);
            grad->at(y + 1, xx, ch) += g;
            grad->at(y, xx, ch) -= g;
          }
        }
      }
  return tv / n;
}

}  // namespace detail

// Projected gradient ascent on activation - weight * TV, the step scaled by
// the RMS of the gradient and the image clipped to [0,1] after each step.
inline ActMaxResult activation_maximization(const ActivationProbe& probe, const ActMaxConfig& cfg) {
  cfg.validate();
  const Shape3 shape = probe.network().graph().input_shape();
  probe.layer_of(cfg.layer_index, cfg.unit_index);
  ActMaxResult r;
  r.image = random_input(shape, cfg.seed);
  Workspace<float> ws;
  ImageTensor g;
  for (int step = 0; step < cfg.steps; ++step) {
    r.trace.push_back(probe.gradient(r.image, cfg.layer_index, cfg.unit_index, ws, g));
    if (cfg.regularization_weight > 0) {
      ImageTensor tvg(shape);
      detail::total_variation(r.image, &tvg);
      for (std::size_t i = 0; i < g.size(); ++i)
        g.values[i] -= static_cast<float>(cfg.regularization_weight) * tvg.values[i];
    }
    double ss = 0.0;
    for (float v : g.values) ss += static_cast<double>(v) * v;
    const double rms = std::sqrt(ss / static_cast<double>(g.size()));
    if (!(rms > 0)) break;
    const double scale = cfg.step_size / rms;
    for (std::size_t i = 0; i < g.size(); ++i)
      r.image.values[i] = std::clamp(r.image.values[i] + static_cast<float>(scale * g.values[i]), 0.0f, 1.0f);
  }
  r.trace.push_back(probe.activation(r.image, cfg.layer_index, cfg.unit_index, ws));
  return r;
}

inline ActMaxResult activation_maximization(const ModelGraph& graph, const Checkpoint& ckpt, const ActMaxConfig& cfg) {
  require_compatible(ckpt, graph);
  return activation_maximization(ActivationProbe(graph, ckpt), cfg);
}

}  // namespace ftunet
