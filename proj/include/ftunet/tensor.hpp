#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "ftunet/error.hpp"

namespace ftunet {

struct Shape3 {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t pixels() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  std::size_t size() const { return pixels() * static_cast<std::size_t>(channels); }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

// Channels-last (HWC) dense feature map.
template <class T>
struct Tensor {
  Shape3 shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(Shape3 s, T fill = T{}) : shape(s), values(s.size(), fill) {}
  Tensor(int h, int w, int c, T fill = T{}) : Tensor(Shape3{h, w, c}, fill) {}

  int height() const { return shape.height; }
  int width() const { return shape.width; }
  int channels() const { return shape.channels; }
  std::size_t size() const { return values.size(); }

  T& at(int y, int x, int c = 0) {
    return values[(static_cast<std::size_t>(y) * shape.width + x) * shape.channels + c];
  }
  const T& at(int y, int x, int c = 0) const {
    return values[(static_cast<std::size_t>(y) * shape.width + x) * shape.channels + c];
  }

  std::span<T> span() { return values; }
  std::span<const T> span() const { return values; }

  void fill(T v) { std::fill(values.begin(), values.end(), v); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Images and masks are single-precision, values in [0,1]; masks are {0,1}.
using ImageTensor = Tensor<float>;

inline bool is_binary(const ImageTensor& m) {
  return std::all_of(m.values.begin(), m.values.end(), [](float v) { return v == 0.0f || v == 1.0f; });
}

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape);
  std::transform(t.values.begin(), t.values.end(), out.values.begin(), [](From v) { return static_cast<To>(v); });
  return out;
}

}  // namespace ftunet
