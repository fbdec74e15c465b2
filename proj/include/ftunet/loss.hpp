#pragma once

#include <algorithm>
#include <cmath>

#include "ftunet/error.hpp"
#include "ftunet/tensor.hpp"

namespace ftunet {

constexpr double kProbabilityClamp = 1e-7;

template <class T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> dz;  // gradient w.r.t. the head pre-activation
};

// Mean pixelwise binary cross-entropy on sigmoid probabilities clipped to
// [1e-7, 1-1e-7]. The clipped loss is flat outside that band, so dz is zero
// there; inside it reduces to (p - y) / N.
template <class T>
LossResult<T> binary_cross_entropy(const Tensor<T>& prob, const Tensor<T>& target, double scale = 1.0) {
  if (prob.shape != target.shape) throw ArgumentError("prediction and target shapes differ");
  LossResult<T> r;
  r.dz = Tensor<T>(prob.shape);
  const double n = static_cast<double>(prob.size());
  double total = 0.0;
  for (std::size_t j = 0; j < prob.size(); ++j) {
    const double p = prob.values[j];
    const double y = target.values[j];
    const double pc = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
    total -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    const bool inside = p > kProbabilityClamp && p < 1.0 - kProbabilityClamp;
    r.dz.values[j] = inside ? static_cast<T>(scale * (p - y) / n) : T(0);
  }
  r.loss = total / n;
  return r;
}

}  // namespace ftunet
