#pragma once

#include <algorithm>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftunet/error.hpp"
#include "ftunet/graph.hpp"

namespace ftunet {

enum class BlockRole { contracting, bottleneck, expanding, head_attached };

inline const char* to_string(BlockRole r) {
  switch (r) {
    case BlockRole::contracting: return "contracting";
    case BlockRole::bottleneck: return "bottleneck";
    case BlockRole::expanding: return "expanding";
    case BlockRole::head_attached: return "head-attached";
  }
  return "?";
}

struct LayerBlock {
  int index = 0;  // 1-based
  BlockRole role{};
  std::vector<int> conv_layer_indices;  // conv3x3 ordinals
  std::vector<int> layer_indices;       // every parameterized graph layer owned by the block
  int depth_rank = 0;                   // 1 = shallowest
};

// Longest path (in layers) from the network input to each layer.
inline std::vector<int> longest_paths(const ModelGraph& g) {
  std::vector<int> lp(g.layers.size(), 0);
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    int best = 0;
    for (int src : g.layers[i].inputs) {
      if (src == kNetworkInput) continue;
      if (src < 0 || static_cast<std::size_t>(src) >= i)
        throw StructuralError("layer " + g.layers[i].name + " consumes a later layer");
      best = std::max(best, lp[src]);
    }
    lp[i] = best + 1;
  }
  return lp;
}

// Groups the layers between consecutive pooling/upsampling layers into blocks.
// The 1x1 head joins the last block.
inline std::vector<LayerBlock> enumerate_blocks(const ModelGraph& g) {
  if (g.layers.empty() || g.layers.back().kind != LayerKind::conv1x1_sigmoid)
    throw StructuralError("unrecognized topology: graph must end in a 1x1 sigmoid head");
  const auto lp = longest_paths(g);

  std::vector<LayerBlock> blocks;
  std::vector<int> block_key;
  bool open = false;
  bool after_upsample = false;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    switch (l.kind) {
      case LayerKind::maxpool2x2:
        if (!open || after_upsample) throw StructuralError("unrecognized topology: misplaced pooling at " + l.name);
        blocks.back().role = BlockRole::contracting;
        open = false;
        break;
      case LayerKind::upsample2x:
        if (!open) throw StructuralError("unrecognized topology: misplaced upsampling at " + l.name);
        open = false;
        after_upsample = true;
        break;
      case LayerKind::conv3x3_relu:
      case LayerKind::conv2x2_relu:
        if (!open) {
          LayerBlock b;
          b.index = static_cast<int>(blocks.size()) + 1;
          b.role = after_upsample ? BlockRole::expanding : BlockRole::bottleneck;
          blocks.push_back(std::move(b));
          block_key.push_back(0);
          open = true;
        }
        if (l.kind == LayerKind::conv2x2_relu && blocks.back().role != BlockRole::expanding)
          throw StructuralError("unrecognized topology: up-conv outside the expanding path at " + l.name);
        if (l.kind == LayerKind::conv3x3_relu) blocks.back().conv_layer_indices.push_back(l.conv_ordinal);
        blocks.back().layer_indices.push_back(static_cast<int>(i));
        block_key.back() = std::max(block_key.back(), lp[i]);
        break;
      case LayerKind::conv1x1_sigmoid:
        if (i + 1 != g.layers.size() || blocks.empty())
          throw StructuralError("unrecognized topology: head must be the final layer");
        blocks.back().layer_indices.push_back(static_cast<int>(i));
        blocks.back().role = BlockRole::head_attached;
        break;
      case LayerKind::concat_skip:
      case LayerKind::dropout:
        break;
    }
  }
  for (const auto& b : blocks)
    if (b.conv_layer_indices.size() != 2)
      throw StructuralError("unrecognized topology: block " + std::to_string(b.index) +
                            " does not hold exactly two 3x3 convolutions");

  std::vector<int> order(blocks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return block_key[a] < block_key[b]; });
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (r > 0 && block_key[order[r]] == block_key[order[r - 1]])
      throw StructuralError("ambiguous depth ordering between blocks");
    blocks[order[r]].depth_rank = static_cast<int>(r) + 1;
  }
  return blocks;
}

class FreezePlan {
 public:
  FreezePlan(std::set<int> trainable, std::string label) : trainable_(std::move(trainable)), label_(std::move(label)) {
    if (trainable_.empty()) throw ArgumentError("freeze plan '" + label_ + "' has no trainable blocks");
    if (*trainable_.begin() < 1) throw ArgumentError("freeze plan block indices are 1-based");
  }

  const std::set<int>& trainable_blocks() const { return trainable_; }
  const std::string& label() const { return label_; }
  int k() const { return static_cast<int>(trainable_.size()); }
  bool trains(int block) const { return trainable_.contains(block); }

  friend bool operator==(const FreezePlan&, const FreezePlan&) = default;

 private:
  std::set<int> trainable_;
  std::string label_;
};

inline void to_json(nlohmann::json& j, const FreezePlan& p) {
  j = nlohmann::json{{"label", p.label()}, {"trainable_blocks", p.trainable_blocks()}};
}
inline FreezePlan freeze_plan_from_json(const nlohmann::json& j) {
  return FreezePlan(j.at("trainable_blocks").get<std::set<int>>(), j.value("label", std::string{"custom"}));
}

enum class NetworkPart { contracting, expanding };
enum class SweepDirection { shallow_to_deep, deep_to_shallow };

inline const char* to_string(SweepDirection d) {
  return d == SweepDirection::shallow_to_deep ? "shallow_to_deep" : "deep_to_shallow";
}

inline FreezePlan make_full_plan(const std::vector<LayerBlock>& blocks, std::string label = "all_blocks") {
  std::set<int> all;
  for (const auto& b : blocks) all.insert(b.index);
  return FreezePlan(std::move(all), std::move(label));
}

// Contracting = blocks whose convs are among the first 2*depth ordinals. A
// depth-1 network has no expanding blocks, so both parts are the whole network.
inline FreezePlan make_two_part_plan(NetworkPart part, const std::vector<LayerBlock>& blocks) {
  if (blocks.empty()) throw ArgumentError("no blocks");
  const int depth = (static_cast<int>(blocks.size()) + 1) / 2;
  std::set<int> contracting, expanding;
  for (const auto& b : blocks) {
    const bool shallow = std::all_of(b.conv_layer_indices.begin(), b.conv_layer_indices.end(),
                                     [&](int ord) { return ord <= 2 * depth; });
    (shallow ? contracting : expanding).insert(b.index);
  }
  if (part == NetworkPart::contracting) return FreezePlan(std::move(contracting), "contracting_tuned");
  if (expanding.empty()) expanding = contracting;
  return FreezePlan(std::move(expanding), "expanding_tuned");
}

inline FreezePlan make_cumulative_plan(SweepDirection direction, int k, const std::vector<LayerBlock>& blocks) {
  if (k < 1 || k > static_cast<int>(blocks.size()))
    throw ArgumentError("cumulative plan size k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(blocks.size()) + "]");
  std::vector<const LayerBlock*> ranked;
  for (const auto& b : blocks) ranked.push_back(&b);
  std::sort(ranked.begin(), ranked.end(), [](auto a, auto b) { return a->depth_rank < b->depth_rank; });
  if (direction == SweepDirection::deep_to_shallow) std::reverse(ranked.begin(), ranked.end());
  std::set<int> chosen;
  for (int i = 0; i < k; ++i) chosen.insert(ranked[i]->index);
  return FreezePlan(std::move(chosen), to_string(direction));
}

// Sets the trainable flag of every parameterized layer from the plan.
inline ModelGraph apply_freeze_plan(ModelGraph g, const FreezePlan& plan) {
  const auto blocks = enumerate_blocks(g);
  for (int idx : plan.trainable_blocks())
    if (idx < 1 || idx > static_cast<int>(blocks.size()))
      throw ArgumentError("freeze plan references unknown block " + std::to_string(idx));
  for (const auto& b : blocks)
    for (int li : b.layer_indices) g.layers[li].trainable = plan.trains(b.index);
  return g;
}

// Reads the plan back from the graph's trainable flags.
inline std::set<int> trainable_blocks(const ModelGraph& g) {
  std::set<int> out;
  for (const auto& b : enumerate_blocks(g)) {
    const bool any = std::any_of(b.layer_indices.begin(), b.layer_indices.end(),
                                 [&](int li) { return g.layers[li].trainable; });
    if (any) out.insert(b.index);
  }
  return out;
}

enum class ParameterSelector { all, trainable, frozen };

struct ParameterCounts {
  std::size_t all = 0;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  std::vector<std::size_t> per_block;  // indexed by block index - 1
};

inline ParameterCounts count_parameters(const ModelGraph& g) {
  ParameterCounts c;
  for (const auto& l : g.layers) {
    const auto n = l.parameter_count();
    c.all += n;
    (l.trainable ? c.trainable : c.frozen) += n;
  }
  for (const auto& b : enumerate_blocks(g)) {
    std::size_t n = 0;
    for (int li : b.layer_indices) n += g.layers[li].parameter_count();
    c.per_block.push_back(n);
  }
  return c;
}

inline std::size_t count_parameters(const ModelGraph& g, ParameterSelector sel) {
  std::size_t n = 0;
  for (const auto& l : g.layers) {
    if (sel == ParameterSelector::trainable && !l.trainable) continue;
    if (sel == ParameterSelector::frozen && l.trainable) continue;
    n += l.parameter_count();
  }
  return n;
}

}  // namespace ftunet
