#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "ftunet/blas.hpp"
#include "ftunet/blocks.hpp"
#include "ftunet/graph.hpp"
#include "ftunet/random.hpp"
#include "ftunet/tensor.hpp"

namespace ftunet {

// Kernel stored HWIO: [k][k][in_channels][out_channels].
template <class T>
struct LayerParams {
  std::vector<T> kernel;
  std::vector<T> bias;

  bool empty() const { return kernel.empty(); }
  void zero() {
    std::fill(kernel.begin(), kernel.end(), T{});
    std::fill(bias.begin(), bias.end(), T{});
  }
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <class T>
using ParamList = std::vector<LayerParams<T>>;  // indexed by graph layer

// Activations kept from a forward pass, consumed by backward.
template <class T>
struct Workspace {
  Tensor<T> input;
  std::vector<Tensor<T>> outputs;
  std::vector<Tensor<T>> preactivations;  // parameterized layers only
  std::vector<std::vector<std::uint32_t>> argmax;
  std::vector<std::vector<T>> dropout_scale;
  std::vector<T> col;  // im2col scratch
  int last_layer = -1;
};

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  int stop_after = -1;  // run layers [0, stop_after]; -1 = all
};

namespace detail {

constexpr int kChunkPixels = 1024;

template <class T>
void im2col(const Tensor<T>& in, int k, int y0, int y1, T* col) {
  const int w = in.width(), h = in.height(), c = in.channels();
  const int pb = (k - 1) / 2;
  const std::size_t kk = static_cast<std::size_t>(k) * k * c;
  for (int y = y0; y < y1; ++y)
    for (int x = 0; x < w; ++x) {
      T* row = col + (static_cast<std::size_t>(y - y0) * w + x) * kk;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = y + ky - pb;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = x + kx - pb;
          T* dst = row + (static_cast<std::size_t>(ky) * k + kx) * c;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w)
            std::memset(dst, 0, sizeof(T) * c);
          else
            std::memcpy(dst, &in.at(iy, ix, 0), sizeof(T) * c);
        }
      }
    }
}

template <class T>
void col2im_add(const T* col, int k, int y0, int y1, Tensor<T>& out) {
  const int w = out.width(), h = out.height(), c = out.channels();
  const int pb = (k - 1) / 2;
  const std::size_t kk = static_cast<std::size_t>(k) * k * c;
  for (int y = y0; y < y1; ++y)
    for (int x = 0; x < w; ++x) {
      const T* row = col + (static_cast<std::size_t>(y - y0) * w + x) * kk;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = y + ky - pb;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = x + kx - pb;
          if (ix < 0 || ix >= w) continue;
          const T* src = row + (static_cast<std::size_t>(ky) * k + kx) * c;
          T* dst = &out.at(iy, ix, 0);
          for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
}

inline int chunk_rows(int width) { return std::max(1, kChunkPixels / std::max(1, width)); }

// Same-padded convolution, z = conv(in) + bias.
template <class T>
void conv_forward(const Tensor<T>& in, const LayerParams<T>& p, int k, int cout, Tensor<T>& z, std::vector<T>& col) {
  const int h = in.height(), w = in.width();
  const int kk = k * k * in.channels();
  z = Tensor<T>(h, w, cout);
  if (k == 1) {
    blas::gemm(false, false, h * w, cout, kk, T(1), in.values.data(), kk, p.kernel.data(), cout, T(0),
               z.values.data(), cout);
  } else {
    const int rows = chunk_rows(w);
    col.resize(static_cast<std::size_t>(rows) * w * kk);
    for (int y0 = 0; y0 < h; y0 += rows) {
      const int y1 = std::min(h, y0 + rows);
      im2col(in, k, y0, y1, col.data());
      blas::gemm(false, false, (y1 - y0) * w, cout, kk, T(1), col.data(), kk, p.kernel.data(), cout, T(0),
                 z.values.data() + static_cast<std::size_t>(y0) * w * cout, cout);
    }
  }
  T* zp = z.values.data();
  for (std::size_t px = 0; px < z.shape.pixels(); ++px, zp += cout)
    for (int o = 0; o < cout; ++o) zp[o] += p.bias[o];
}

// Given dz, accumulates parameter gradients (if grad != nullptr) and input
// gradients (if din != nullptr).
template <class T>
void conv_backward(const Tensor<T>& in, const LayerParams<T>& p, int k, int cout, const Tensor<T>& dz,
                   LayerParams<T>* grad, Tensor<T>* din, std::vector<T>& col) {
  const int h = in.height(), w = in.width();
  const int kk = k * k * in.channels();
  if (grad) {
    const T* dp = dz.values.data();
    for (std::size_t px = 0; px < dz.shape.pixels(); ++px, dp += cout)
      for (int o = 0; o < cout; ++o) grad->bias[o] += dp[o];
  }
  if (k == 1) {
    if (grad)
      blas::gemm(true, false, kk, cout, h * w, T(1), in.values.data(), kk, dz.values.data(), cout, T(1),
                 grad->kernel.data(), cout);
    if (din)
      blas::gemm(false, true, h * w, kk, cout, T(1), dz.values.data(), cout, p.kernel.data(), cout, T(1),
                 din->values.data(), kk);
    return;
  }
  const int rows = chunk_rows(w);
  col.resize(static_cast<std::size_t>(rows) * w * kk);
  for (int y0 = 0; y0 < h; y0 += rows) {
    const int y1 = std::min(h, y0 + rows);
    const int n = (y1 - y0) * w;
    const T* dzc = dz.values.data() + static_cast<std::size_t>(y0) * w * cout;
    if (grad) {
      im2col(in, k, y0, y1, col.data());
      blas::gemm(true, false, kk, cout, n, T(1), col.data(), kk, dzc, cout, T(1), grad->kernel.data(), cout);
    }
    if (din) {
      blas::gemm(false, true, n, kk, cout, T(1), dzc, cout, p.kernel.data(), cout, T(0), col.data(), kk);
      col2im_add(col.data(), k, y0, y1, *din);
    }
  }
}

template <class T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

}  // namespace detail

template <class T>
class Network {
 public:
  explicit Network(ModelGraph g) : graph_(std::move(g)), params_(graph_.layers.size()) {
    for (std::size_t i = 0; i < graph_.layers.size(); ++i) {
      const auto& l = graph_.layers[i];
      if (!has_parameters(l.kind)) continue;
      const std::size_t k = l.kernel();
      params_[i].kernel.assign(k * k * l.in_channels * l.out_channels, T{});
      params_[i].bias.assign(l.out_channels, T{});
    }
  }

  const ModelGraph& graph() const { return graph_; }
  ParamList<T>& params() { return params_; }
  const ParamList<T>& params() const { return params_; }

  // Replaces trainability flags; topology must be unchanged.
  void set_trainability(const ModelGraph& g) {
    if (fingerprint(g) != fingerprint(graph_)) throw StructuralError("graph topology differs");
    for (std::size_t i = 0; i < g.layers.size(); ++i) graph_.layers[i].trainable = g.layers[i].trainable;
  }

  // Uniform He fan-in initialization, zero biases. Each layer draws from its
  // own stream keyed by its name.
  void init_he_uniform(std::uint64_t seed) {
    for (std::size_t i = 0; i < graph_.layers.size(); ++i) {
      const auto& l = graph_.layers[i];
      if (!has_parameters(l.kind)) continue;
      Rng rng(derive_seed({seed, hash_string(l.name)}));
      const double fan_in = static_cast<double>(l.kernel()) * l.kernel() * l.in_channels;
      const double limit = std::sqrt(6.0 / fan_in);
      for (auto& w : params_[i].kernel) w = static_cast<T>(rng.uniform(-limit, limit));
      std::fill(params_[i].bias.begin(), params_[i].bias.end(), T{});
    }
  }

  ParamList<T> zero_gradients() const {
    ParamList<T> g(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (!params_[i].empty() && graph_.layers[i].trainable) {
        g[i].kernel.assign(params_[i].kernel.size(), T{});
        g[i].bias.assign(params_[i].bias.size(), T{});
      }
    return g;
  }

  void forward(const Tensor<T>& x, Workspace<T>& ws, const ForwardOptions& opt = {}) const {
    if (x.shape != graph_.input_shape()) throw ArgumentError("input shape does not match the network input");
    const int n = static_cast<int>(graph_.layers.size());
    const int last = opt.stop_after < 0 ? n - 1 : std::min(opt.stop_after, n - 1);
    ws.input = x;
    ws.outputs.resize(n);
    ws.preactivations.resize(n);
    ws.argmax.resize(n);
    ws.dropout_scale.resize(n);
    ws.last_layer = last;
    auto in = [&](int src) -> const Tensor<T>& { return src == kNetworkInput ? ws.input : ws.outputs[src]; };

    for (int i = 0; i <= last; ++i) {
      const auto& l = graph_.layers[i];
      const Tensor<T>& a = in(l.inputs[0]);
      Tensor<T>& out = ws.outputs[i];
      switch (l.kind) {
        case LayerKind::conv3x3_relu:
        case LayerKind::conv2x2_relu: {
          detail::conv_forward(a, params_[i], l.kernel(), l.out_channels, ws.preactivations[i], ws.col);
          out = ws.preactivations[i];
          for (auto& v : out.values) v = v > T(0) ? v : T(0);
          break;
        }
        case LayerKind::conv1x1_sigmoid: {
          detail::conv_forward(a, params_[i], 1, l.out_channels, ws.preactivations[i], ws.col);
          out = ws.preactivations[i];
          for (auto& v : out.values) v = detail::sigmoid(v);
          break;
        }
        case LayerKind::maxpool2x2: {
          out = Tensor<T>(l.out_shape);
          auto& idx = ws.argmax[i];
          idx.assign(out.size(), 0);
          const int c = a.channels();
          for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x)
              for (int ch = 0; ch < c; ++ch) {
                std::uint32_t best = static_cast<std::uint32_t>(((2 * y) * a.width() + 2 * x) * c + ch);
                T bv = a.values[best];
                for (int dy = 0; dy < 2; ++dy)
                  for (int dx = 0; dx < 2; ++dx) {
                    const auto j = static_cast<std::uint32_t>(((2 * y + dy) * a.width() + 2 * x + dx) * c + ch);
                    if (a.values[j] > bv) {
                      bv = a.values[j];
                      best = j;
                    }
                  }
                const std::size_t o = (static_cast<std::size_t>(y) * out.width() + x) * c + ch;
                out.values[o] = bv;
                idx[o] = best;
              }
          break;
        }
        case LayerKind::upsample2x: {
          out = Tensor<T>(l.out_shape);
          const int c = a.channels();
          for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x)
              std::memcpy(&out.at(y, x, 0), &a.at(y / 2, x / 2, 0), sizeof(T) * c);
          break;
        }
        case LayerKind::concat_skip: {
          const Tensor<T>& b = in(l.inputs[1]);
          out = Tensor<T>(l.out_shape);
          const int ca = a.channels(), cb = b.channels();
          for (std::size_t px = 0; px < out.shape.pixels(); ++px) {
            std::memcpy(out.values.data() + px * (ca + cb), a.values.data() + px * ca, sizeof(T) * ca);
            std::memcpy(out.values.data() + px * (ca + cb) + ca, b.values.data() + px * cb, sizeof(T) * cb);
          }
          break;
        }
        case LayerKind::dropout: {
          out = a;
          auto& scale = ws.dropout_scale[i];
          scale.clear();
          if (opt.training && l.rate > 0.0) {
            Rng rng(derive_seed({opt.dropout_seed, static_cast<std::uint64_t>(i)}));
            const T keep = l.rate >= 1.0 ? T(0) : static_cast<T>(1.0 / (1.0 - l.rate));
            scale.resize(out.size());
            for (std::size_t j = 0; j < out.size(); ++j) {
              scale[j] = rng.uniform() < l.rate ? T(0) : keep;
              out.values[j] *= scale[j];
            }
          }
          break;
        }
      }
    }
  }

  // Backpropagates a gradient seeded at the pre-activation of `seed_layer`
  // (which must be parameterized). Parameter gradients of trainable layers
  // are accumulated into `grads`; frozen layers get none, and branches with
  // no trainable ancestor are skipped. Returns d(seed)/d(input) when
  // `input_gradient` is set, otherwise an empty tensor.
  Tensor<T> backward(Workspace<T>& ws, int seed_layer, const Tensor<T>& dz_seed, ParamList<T>* grads,
                     bool input_gradient = false) const {
    const int n = static_cast<int>(graph_.layers.size());
    if (seed_layer < 0 || seed_layer > ws.last_layer) throw ArgumentError("backward seed outside the forward pass");
    if (!has_parameters(graph_.layers[seed_layer].kind)) throw ArgumentError("backward seed must be a conv layer");

    std::vector<char> need(n, 0);
    for (int i = 0; i <= seed_layer; ++i) {
      const auto& l = graph_.layers[i];
      bool v = has_parameters(l.kind) && l.trainable && grads != nullptr;
      for (int src : l.inputs) v = v || (src == kNetworkInput ? input_gradient : need[src] != 0);
      need[i] = v;
    }
    auto needs = [&](int src) { return src == kNetworkInput ? input_gradient : need[src] != 0; };

    std::vector<Tensor<T>> dout(n);
    Tensor<T> dinput;
    auto grad_of = [&](int src) -> Tensor<T>& {
      Tensor<T>& t = src == kNetworkInput ? dinput : dout[src];
      if (t.values.empty()) t = Tensor<T>(src == kNetworkInput ? ws.input.shape : ws.outputs[src].shape);
      return t;
    };
    auto in = [&](int src) -> const Tensor<T>& { return src == kNetworkInput ? ws.input : ws.outputs[src]; };

    for (int i = seed_layer; i >= 0; --i) {
      if (!need[i]) continue;
      const auto& l = graph_.layers[i];
      if (i != seed_layer && dout[i].values.empty()) continue;
      const int src = l.inputs[0];
      switch (l.kind) {
        case LayerKind::conv3x3_relu:
        case LayerKind::conv2x2_relu:
        case LayerKind::conv1x1_sigmoid: {
          Tensor<T> dz;
          if (i == seed_layer) {
            dz = dz_seed;
          } else {
            dz = std::move(dout[i]);
            const auto& o = ws.outputs[i].values;
            if (l.kind == LayerKind::conv1x1_sigmoid)
              for (std::size_t j = 0; j < o.size(); ++j) dz.values[j] *= o[j] * (T(1) - o[j]);
            else
              for (std::size_t j = 0; j < o.size(); ++j)
                if (!(o[j] > T(0))) dz.values[j] = T(0);
          }
          LayerParams<T>* g = (l.trainable && grads) ? &(*grads)[i] : nullptr;
          Tensor<T>* din = needs(src) ? &grad_of(src) : nullptr;
          if (g || din) detail::conv_backward(in(src), params_[i], l.kernel(), l.out_channels, dz, g, din, ws.col);
          break;
        }
        case LayerKind::maxpool2x2: {
          if (!needs(src)) break;
          Tensor<T>& din = grad_of(src);
          const auto& idx = ws.argmax[i];
          for (std::size_t j = 0; j < idx.size(); ++j) din.values[idx[j]] += dout[i].values[j];
          break;
        }
        case LayerKind::upsample2x: {
          if (!needs(src)) break;
          Tensor<T>& din = grad_of(src);
          const int c = din.channels();
          const Tensor<T>& d = dout[i];
          for (int y = 0; y < d.height(); ++y)
            for (int x = 0; x < d.width(); ++x) {
              T* dst = &din.at(y / 2, x / 2, 0);
              const T* s = &d.at(y, x, 0);
              for (int ch = 0; ch < c; ++ch) dst[ch] += s[ch];
            }
          break;
        }
        case LayerKind::concat_skip: {
          const int sb = l.inputs[1];
          const int ca = in(src).channels(), cb = in(sb).channels();
          const Tensor<T>& d = dout[i];
          if (needs(src)) {
            Tensor<T>& da = grad_of(src);
            for (std::size_t px = 0; px < d.shape.pixels(); ++px)
              for (int ch = 0; ch < ca; ++ch) da.values[px * ca + ch] += d.values[px * (ca + cb) + ch];
          }
          if (needs(sb)) {
            Tensor<T>& db = grad_of(sb);
            for (std::size_t px = 0; px < d.shape.pixels(); ++px)
              for (int ch = 0; ch < cb; ++ch) db.values[px * cb + ch] += d.values[px * (ca + cb) + ca + ch];
          }
          break;
        }
        case LayerKind::dropout: {
          if (!needs(src)) break;
          Tensor<T>& din = grad_of(src);
          const auto& scale = ws.dropout_scale[i];
          if (scale.empty())
            for (std::size_t j = 0; j < din.size(); ++j) din.values[j] += dout[i].values[j];
          else
            for (std::size_t j = 0; j < din.size(); ++j) din.values[j] += dout[i].values[j] * scale[j];
          break;
        }
      }
      if (i != seed_layer) dout[i] = Tensor<T>();
    }
    return dinput;
  }

  int head_layer() const { return static_cast<int>(graph_.layers.size()) - 1; }

  // Named tensors, kernels shaped [k,k,in,out] and biases [out].
  struct NamedShape {
    std::string name;
    std::vector<int> shape;
    int layer;
    bool is_bias;
  };
  std::vector<NamedShape> tensor_layout() const {
    std::vector<NamedShape> out;
    for (std::size_t i = 0; i < graph_.layers.size(); ++i) {
      const auto& l = graph_.layers[i];
      if (!has_parameters(l.kind)) continue;
      out.push_back({l.name + ".kernel", {l.kernel(), l.kernel(), l.in_channels, l.out_channels},
                     static_cast<int>(i), false});
      out.push_back({l.name + ".bias", {l.out_channels}, static_cast<int>(i), true});
    }
    return out;
  }

 private:
  ModelGraph graph_;
  ParamList<T> params_;
};

template <class To, class From>
Network<To> network_cast(const Network<From>& src) {
  Network<To> out(src.graph());
  for (std::size_t i = 0; i < src.params().size(); ++i) {
    const auto& p = src.params()[i];
    out.params()[i].kernel.assign(p.kernel.begin(), p.kernel.end());
    out.params()[i].bias.assign(p.bias.begin(), p.bias.end());
  }
  return out;
}

}  // namespace ftunet
