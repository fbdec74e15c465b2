#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ftunet/architecture.hpp"
#include "ftunet/hash.hpp"
#include "ftunet/tensor.hpp"

namespace ftunet {

enum class LayerKind {
  conv3x3_relu,
  maxpool2x2,
  upsample2x,
  conv2x2_relu,
  concat_skip,
  dropout,
  conv1x1_sigmoid,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv3x3_relu: return "conv3x3+relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::upsample2x: return "upsample2x";
    case LayerKind::conv2x2_relu: return "conv2x2+relu";
    case LayerKind::concat_skip: return "concat-skip";
    case LayerKind::dropout: return "dropout";
    case LayerKind::conv1x1_sigmoid: return "conv1x1+sigmoid";
  }
  return "?";
}

inline bool has_parameters(LayerKind k) {
  return k == LayerKind::conv3x3_relu || k == LayerKind::conv2x2_relu || k == LayerKind::conv1x1_sigmoid;
}

inline int kernel_size(LayerKind k) {
  switch (k) {
    case LayerKind::conv3x3_relu: return 3;
    case LayerKind::conv2x2_relu: return 2;
    case LayerKind::conv1x1_sigmoid: return 1;
    default: return 0;
  }
}

constexpr int kNetworkInput = -1;

struct LayerDesc {
  LayerKind kind{};
  std::string name;
  std::vector<int> inputs;  // producing layer indices, kNetworkInput for the image
  Shape3 out_shape;
  int in_channels = 0;   // parameterized layers: channels entering the kernel
  int out_channels = 0;
  int conv_ordinal = 0;  // 1-based among conv3x3 layers, 0 otherwise
  double rate = 0.0;     // dropout only
  bool trainable = true;

  int kernel() const { return kernel_size(kind); }
  std::size_t parameter_count() const {
    if (!has_parameters(kind)) return 0;
    const std::size_t k = static_cast<std::size_t>(kernel());
    return k * k * static_cast<std::size_t>(in_channels) * out_channels + out_channels;
  }
};

struct ModelGraph {
  ArchitectureSpec spec;
  std::vector<LayerDesc> layers;
  std::vector<std::pair<int, int>> skip_links;  // (contracting block output, concat layer)

  Shape3 input_shape() const { return {spec.input_height, spec.input_width, spec.input_channels}; }
  Shape3 output_shape() const { return layers.back().out_shape; }

  Shape3 shape_of(int index) const { return index == kNetworkInput ? input_shape() : layers[index].out_shape; }

  // Layer index of the given 1-based conv3x3 ordinal, or -1.
  int conv_layer(int ordinal) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].conv_ordinal == ordinal) return static_cast<int>(i);
    return -1;
  }
  int conv3x3_count() const {
    int n = 0;
    for (const auto& l : layers) n += l.kind == LayerKind::conv3x3_relu;
    return n;
  }
  int count(LayerKind k) const {
    int n = 0;
    for (const auto& l : layers) n += l.kind == k;
    return n;
  }
};

// Hash over layer kinds, names, shapes, wiring and ordering. Trainability is
// excluded so a checkpoint stays compatible across freeze plans.
inline std::string fingerprint(const ModelGraph& g) {
  Fnv1a h;
  h.str("ftunet-graph-v1");
  const auto in = g.input_shape();
  h.u64(in.height).u64(in.width).u64(in.channels);
  for (const auto& l : g.layers) {
    h.str(to_string(l.kind)).str(l.name);
    h.u64(l.out_shape.height).u64(l.out_shape.width).u64(l.out_shape.channels);
    h.u64(l.in_channels).u64(l.out_channels);
    h.u64(l.inputs.size());
    for (int i : l.inputs) h.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(i)));
  }
  return to_hex(h.value());
}

// Builds the U-Net: two same-padded 3x3 conv+ReLU per level, 2x2 max pooling
// between contracting levels, dropout after the bottleneck, and in each
// expanding level a nearest 2x upsample, a 2x2 conv that halves the channels,
// a skip concatenation and two 3x3 conv+ReLU. A 1x1 sigmoid conv is the head.
inline ModelGraph build_unet(const ArchitectureSpec& spec) {
  spec.validate();
  ModelGraph g;
  g.spec = spec;
  int ordinal = 0;

  auto add = [&](LayerDesc d) {
    g.layers.push_back(std::move(d));
    return static_cast<int>(g.layers.size()) - 1;
  };
  auto conv = [&](LayerKind kind, std::string name, int input, int out_channels) {
    const Shape3 s = g.shape_of(input);
    LayerDesc d;
    d.kind = kind;
    d.name = std::move(name);
    d.inputs = {input};
    d.in_channels = s.channels;
    d.out_channels = out_channels;
    d.out_shape = {s.height, s.width, out_channels};
    if (kind == LayerKind::conv3x3_relu) d.conv_ordinal = ++ordinal;
    return add(std::move(d));
  };

  int current = kNetworkInput;
  std::vector<int> level_outputs(spec.depth + 1, -1);
  for (int level = 1; level <= spec.depth; ++level) {
    const bool bottleneck = level == spec.depth;
    const std::string prefix = bottleneck ? "bottleneck" : "contract" + std::to_string(level);
    const int f = spec.filters_at(level);
    current = conv(LayerKind::conv3x3_relu, prefix + ".conv1", current, f);
    current = conv(LayerKind::conv3x3_relu, prefix + ".conv2", current, f);
    level_outputs[level] = current;
    if (!bottleneck) {
      const Shape3 s = g.shape_of(current);
      LayerDesc pool;
      pool.kind = LayerKind::maxpool2x2;
      pool.name = prefix + ".pool";
      pool.inputs = {current};
      pool.out_shape = {s.height / 2, s.width / 2, s.channels};
      current = add(std::move(pool));
    } else {
      LayerDesc drop;
      drop.kind = LayerKind::dropout;
      drop.name = prefix + ".dropout";
      drop.inputs = {current};
      drop.out_shape = g.shape_of(current);
      drop.rate = spec.dropout_rate;
      current = add(std::move(drop));
    }
  }

  for (int level = spec.depth - 1; level >= 1; --level) {
    const std::string prefix = "expand" + std::to_string(level);
    const int f = spec.filters_at(level);
    const Shape3 s = g.shape_of(current);
    LayerDesc up;
    up.kind = LayerKind::upsample2x;
    up.name = prefix + ".upsample";
    up.inputs = {current};
    up.out_shape = {s.height * 2, s.width * 2, s.channels};
    current = add(std::move(up));
    current = conv(LayerKind::conv2x2_relu, prefix + ".up_conv", current, f);

    const int skip = level_outputs[level];
    const Shape3 a = g.shape_of(current);
    const Shape3 b = g.shape_of(skip);
    LayerDesc cat;
    cat.kind = LayerKind::concat_skip;
    cat.name = prefix + ".concat";
    cat.inputs = {current, skip};
    cat.out_shape = {a.height, a.width, a.channels + b.channels};
    current = add(std::move(cat));
    g.skip_links.emplace_back(skip, current);

    current = conv(LayerKind::conv3x3_relu, prefix + ".conv1", current, f);
    current = conv(LayerKind::conv3x3_relu, prefix + ".conv2", current, f);
  }

  conv(LayerKind::conv1x1_sigmoid, "head", current, 1);
  return g;
}

}  // namespace ftunet
