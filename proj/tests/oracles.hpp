#pragma once

// Reference implementations written independently of the library, shared by
// the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>

#include "ftunet/random.hpp"
#include "ftunet/tensor.hpp"
#include "ftunet/train.hpp"

namespace ftunet::oracle {

inline ImageTensor random_mask(int size, Rng& r, double p = 0.5) {
  ImageTensor m(size, size, 1);
  for (auto& v : m.values) v = r.bernoulli(p) ? 1.0f : 0.0f;
  return m;
}

struct BruteForce {
  double dice, pixel_error;
};

inline BruteForce per_pixel(const ImageTensor& pred, const ImageTensor& gt) {
  double inter = 0, pred_sum = 0, gt_sum = 0, wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred.values[i] * gt.values[i];
    pred_sum += pred.values[i];
    gt_sum += gt.values[i];
    wrong += pred.values[i] != gt.values[i];
  }
  const double d = pred_sum + gt_sum == 0 ? 1.0 : 2 * inter / (pred_sum + gt_sum);
  return {d, 100.0 * wrong / static_cast<double>(pred.size())};
}

// O(n^2) pair enumeration; ARI from the pair-confusion matrix.
inline double pair_enumeration_ari(const ImageTensor& pred, const ImageTensor& gt) {
  double same_same = 0, diff_diff = 0, same_pred_only = 0, same_gt_only = 0;
  const std::size_t n = pred.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sp = pred.values[i] == pred.values[j];
      const bool sg = gt.values[i] == gt.values[j];
      if (sp && sg) ++same_same;
      else if (!sp && !sg) ++diff_diff;
      else if (sp) ++same_pred_only;
      else ++same_gt_only;
    }
  const double denom = (same_same + same_gt_only) * (same_gt_only + diff_diff) +
                       (same_same + same_pred_only) * (same_pred_only + diff_diff);
  if (denom == 0) return (same_pred_only == 0 && same_gt_only == 0) ? 1.0 : 0.0;
  return 2 * (same_same * diff_diff - same_gt_only * same_pred_only) / denom;
}

inline std::size_t conv_params(std::size_t k, std::size_t cin, std::size_t cout) { return k * k * cin * cout + cout; }

// Closed-form sums over the construction rule.
inline std::size_t contracting_params(int depth, int base, int in_ch) {
  std::size_t total = 0;
  std::size_t cin = in_ch;
  for (int l = 1; l <= depth; ++l) {
    const std::size_t f = static_cast<std::size_t>(base) << (l - 1);
    total += conv_params(3, cin, f) + conv_params(3, f, f);
    cin = f;
  }
  return total;
}

// Includes the 1x1 head.
inline std::size_t expanding_params(int depth, int base) {
  std::size_t total = 0;
  for (int l = depth - 1; l >= 1; --l) {
    const std::size_t f = static_cast<std::size_t>(base) << (l - 1);
    total += conv_params(2, 2 * f, f) + conv_params(3, 2 * f, f) + conv_params(3, f, f);
  }
  return total + conv_params(1, base, 1);
}

struct GradientCheck {
  std::size_t total = 0, agreeing = 0, informative = 0;
  double agreement() const { return total == 0 ? 0.0 : static_cast<double>(agreeing) / total; }
};

// Every parameter of a double-precision U-Net, analytic gradient against
// central differences; agreeing means relative error < 1e-4.
inline GradientCheck finite_difference_check(int depth, int base, int size, bool training, std::uint64_t seed) {
  ArchitectureSpec spec;
  spec.input_height = spec.input_width = size;
  spec.depth = depth;
  spec.base_filters = base;
  Network<double> net(build_unet(spec));
  net.init_he_uniform(seed);
  Rng r(seed + 1);
  for (auto& p : net.params())
    for (auto& b : p.bias) b = r.uniform(-0.1, 0.1);
  Rng ri(seed + 2);
  Tensor<double> x(size, size, 1), y(size, size, 1);
  for (auto& v : x.values) v = ri.uniform();
  const double c = size / 2.0, rad = size / 3.0;
  for (int yy = 0; yy < size; ++yy)
    for (int xx = 0; xx < size; ++xx) y.at(yy, xx) = (xx - c) * (xx - c) + (yy - c) * (yy - c) < rad * rad ? 1 : 0;
  ForwardOptions o;
  o.training = training;
  o.dropout_seed = 99;

  auto grads = net.zero_gradients();
  Workspace<double> ws;
  accumulate_gradients(net, x, y, grads, ws, o);
  auto loss = [&] {
    net.forward(x, ws, o);
    return binary_cross_entropy(ws.outputs[net.head_layer()], y).loss;
  };

  const double h = 1e-6;
  GradientCheck out;
  for (std::size_t li = 0; li < net.params().size(); ++li) {
    for (int part = 0; part < 2; ++part) {
      auto& values = part == 0 ? net.params()[li].kernel : net.params()[li].bias;
      const auto& g = part == 0 ? grads[li].kernel : grads[li].bias;
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double keep = values[j];
        values[j] = keep + h;
        const double up = loss();
        values[j] = keep - h;
        const double down = loss();
        values[j] = keep;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max(std::abs(numeric), std::abs(g[j]));
        const double rel = scale < 1e-12 ? 0.0 : std::abs(numeric - g[j]) / scale;
        ++out.total;
        out.agreeing += rel < 1e-4;
        out.informative += scale > 1e-8;
      }
    }
  }
  return out;
}

}  // namespace ftunet::oracle
