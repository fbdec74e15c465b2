#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftunet/blas.hpp"
#include "ftunet/blocks.hpp"
#include "ftunet/checkpoint.hpp"
#include "ftunet/loss.hpp"
#include "ftunet/network.hpp"
#include "ftunet/optimizer.hpp"
#include "ftunet/random.hpp"
#include "ftunet/sample.hpp"

namespace ftunet {

enum class LossKind { binary_cross_entropy };
NLOHMANN_JSON_SERIALIZE_ENUM(LossKind, {{LossKind::binary_cross_entropy, "binary_cross_entropy"}})

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double validation_fraction = 0.0;
  LossKind loss = LossKind::binary_cross_entropy;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate(const std::string& field = "train") const {
    if (epochs < 1) throw ConfigError(field + ".epochs: must be >= 1");
    if (batch_size < 1) throw ConfigError(field + ".batch_size: must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError(field + ".learning_rate: must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw ConfigError(field + ".validation_fraction: must lie in [0,1)");
  }

  AdamSettings adam() const { return {learning_rate, beta1, beta2, epsilon}; }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},   {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate}, {"validation_fraction", c.validation_fraction},
                     {"loss", c.loss},       {"seed", c.seed},
                     {"beta1", c.beta1},     {"beta2", c.beta2},
                     {"epsilon", c.epsilon}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& field, TrainConfig c = {}) {
  auto read = [&](const char* key, auto& v) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(v);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field + "." + key + ": wrong type");
    }
  };
  read("epochs", c.epochs);
  read("batch_size", c.batch_size);
  read("learning_rate", c.learning_rate);
  read("validation_fraction", c.validation_fraction);
  read("seed", c.seed);
  read("beta1", c.beta1);
  read("beta2", c.beta2);
  read("epsilon", c.epsilon);
  if (j.contains("loss") && j.at("loss") != "binary_cross_entropy")
    throw ConfigError(field + ".loss: only \"binary_cross_entropy\" is supported");
  return c;
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) { c = train_config_from_json(j, "train"); }

// FTUNET_DETERMINISTIC=1 pins BLAS to one thread and serializes experiment cells.
inline bool deterministic_mode() {
  const char* v = std::getenv("FTUNET_DETERMINISTIC");
  return v != nullptr && std::string(v) != "0" && std::string(v) != "";
}
inline void configure_determinism() {
  if (deterministic_mode()) blas::set_threads(1);
}

template <class T>
struct StepResult {
  double loss = 0.0;
  Tensor<T> probabilities;
};

// Forward + backward for one sample, accumulating gradients into `grads`.
template <class T>
StepResult<T> accumulate_gradients(const Network<T>& net, const Tensor<T>& image, const Tensor<T>& target,
                                   ParamList<T>& grads, Workspace<T>& ws, const ForwardOptions& opt,
                                   double scale = 1.0) {
  net.forward(image, ws, opt);
  const int head = net.head_layer();
  auto lr = binary_cross_entropy(ws.outputs[head], target, scale);
  net.backward(ws, head, lr.dz, &grads);
  return {lr.loss, ws.outputs[head]};
}

template <class T>
double evaluate_loss(const Network<T>& net, const Tensor<T>& image, const Tensor<T>& target, Workspace<T>& ws) {
  net.forward(image, ws);
  return binary_cross_entropy(ws.outputs[net.head_layer()], target).loss;
}

namespace detail {

inline void check_dataset(const ModelGraph& g, const SampleSet& data) {
  if (data.empty()) throw ArgumentError("training set is empty");
  const Shape3 in = g.input_shape();
  const Shape3 out = g.output_shape();
  for (const auto& s : data) {
    if (s.image.shape != in)
      throw StructuralError("sample " + s.id + " image shape does not match the network input");
    if (s.mask.shape != out) throw StructuralError("sample " + s.id + " mask shape does not match the network output");
  }
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Validation = last fraction of a seeded shuffle.
inline Split split_validation(std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Split s;
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
  if (n_val == 0) {
    s.train = idx;
    return s;
  }
  if (n_val >= n) throw ArgumentError("validation split leaves no training samples");
  Rng rng(derive_seed({seed, hash_string("validation-split")}));
  rng.shuffle(idx);
  s.train.assign(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(n_val));
  s.validation.assign(idx.end() - static_cast<std::ptrdiff_t>(n_val), idx.end());
  return s;
}

// Runs epochs [first_epoch, last_epoch) (0-based). Batch order and dropout
// masks depend only on (seed, epoch, position), so a resumed run replays the
// same sequence as an uninterrupted one.
inline void run_epochs(Network<float>& net, AdamState& state, const SampleSet& data, const TrainConfig& cfg,
                       int first_epoch, int last_epoch, std::vector<EpochRecord>& log) {
  const Split split = split_validation(data.size(), cfg.validation_fraction, cfg.seed);
  Workspace<float> ws;
  const auto adam = cfg.adam();
  for (int epoch = first_epoch; epoch < last_epoch; ++epoch) {
    auto order = split.train;
    Rng rng(derive_seed({cfg.seed, hash_string("epoch-order"), static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      auto grads = net.zero_gradients();
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t pos = start; pos < end; ++pos) {
        const Sample& s = data[order[pos]];
        ForwardOptions opt;
        opt.training = true;
        opt.dropout_seed = derive_seed({cfg.seed, hash_string("dropout"), static_cast<std::uint64_t>(epoch),
                                        static_cast<std::uint64_t>(pos)});
        total += accumulate_gradients(net, s.image, s.mask, grads, ws, opt, scale).loss;
      }
      adam_step(net, grads, state, adam);
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = total / static_cast<double>(order.size());
    if (!split.validation.empty()) {
      double v = 0.0;
      for (auto i : split.validation) v += evaluate_loss(net, data[i].image, data[i].mask, ws);
      rec.validation_loss = v / static_cast<double>(split.validation.size());
    }
    log.push_back(rec);
  }
}

inline nlohmann::json dataset_digest(const SampleSet& data) {
  Fnv1a h;
  for (const auto& s : data) h.str(s.id).str(s.origin_id);
  return {{"samples", data.size()}, {"ids_fnv1a", to_hex(h.value())}};
}

}  // namespace detail

// Trains every block from a He-uniform initialization seeded by cfg.seed.
inline Checkpoint pretrain(const ModelGraph& graph, const SampleSet& data, const TrainConfig& cfg) {
  cfg.validate("pretrain");
  for (const auto& l : graph.layers)
    if (has_parameters(l.kind) && !l.trainable) throw ArgumentError("pretraining requires every block trainable");
  detail::check_dataset(graph, data);
  configure_determinism();

  Network<float> net(graph);
  net.init_he_uniform(derive_seed({cfg.seed, hash_string("init")}));
  AdamState state;
  std::vector<EpochRecord> log;
  detail::run_epochs(net, state, data, cfg, 0, cfg.epochs, log);

  Checkpoint c = snapshot(net);
  c.training_log = std::move(log);
  c.optimizer = std::move(state);
  c.provenance = {{"phase", "pretrain"},
                  {"config", cfg},
                  {"initialization", "he-uniform fan-in, zero bias"},
                  {"plan", make_full_plan(enumerate_blocks(graph))},
                  {"parent", nullptr},
                  {"dataset", detail::dataset_digest(data)},
                  {"epochs_completed", cfg.epochs}};
  return c;
}

// Starts from `init` with fresh optimizer moments and trains only the plan's
// blocks. Frozen tensors are copied through untouched.
inline Checkpoint finetune(const ModelGraph& graph, const Checkpoint& init, const FreezePlan& plan,
                           const SampleSet& data, const TrainConfig& cfg) {
  cfg.validate("finetune");
  require_compatible(init, graph);
  detail::check_dataset(graph, data);
  configure_determinism();

  Network<float> net(apply_freeze_plan(graph, plan));
  restore(net, init);
  AdamState state;
  std::vector<EpochRecord> log;
  detail::run_epochs(net, state, data, cfg, 0, cfg.epochs, log);

  Checkpoint c = snapshot(net);
  c.training_log = std::move(log);
  c.optimizer = std::move(state);
  c.provenance = {{"phase", "finetune"},
                  {"config", cfg},
                  {"plan", plan},
                  {"parent", init.id()},
                  {"dataset", detail::dataset_digest(data)},
                  {"epochs_completed", cfg.epochs}};
  return c;
}

// Continues a fine-tuning checkpoint to `target_epochs` total, reusing its
// optimizer moments and freeze plan. The log grows to target_epochs entries.
inline Checkpoint resume_training(const ModelGraph& graph, const Checkpoint& from, const SampleSet& data,
                                  const TrainConfig& cfg, int target_epochs) {
  require_compatible(from, graph);
  detail::check_dataset(graph, data);
  if (!from.optimizer) throw ArgumentError("checkpoint carries no optimizer state to resume from");
  const int done = static_cast<int>(from.training_log.size());
  if (target_epochs < done)
    throw ArgumentError("cannot resume to " + std::to_string(target_epochs) + " epochs from " + std::to_string(done));
  configure_determinism();

  const FreezePlan plan = freeze_plan_from_json(from.provenance.at("plan"));
  Network<float> net(apply_freeze_plan(graph, plan));
  restore(net, from);
  AdamState state = *from.optimizer;
  auto log = from.training_log;
  TrainConfig run_cfg = cfg;
  run_cfg.epochs = target_epochs;
  detail::run_epochs(net, state, data, run_cfg, done, target_epochs, log);

  Checkpoint c = snapshot(net);
  c.training_log = std::move(log);
  c.optimizer = std::move(state);
  c.provenance = from.provenance;
  c.provenance["config"] = run_cfg;
  c.provenance["epochs_completed"] = target_epochs;
  c.provenance["resumed_from"] = from.id();
  return c;
}

// Inference wrapper holding restored weights; safe to share across threads
// as long as each thread calls predict with its own workspace.
class Predictor {
 public:
  Predictor(const ModelGraph& graph, const Checkpoint& ckpt) : net_(graph) { restore(net_, ckpt); }

  ImageTensor predict(const ImageTensor& image, Workspace<float>& ws) const {
    if (image.shape != net_.graph().input_shape()) throw ArgumentError("image shape does not match the network input");
    net_.forward(image, ws);
    ImageTensor p = ws.outputs[net_.head_layer()];
    constexpr float lo = static_cast<float>(kProbabilityClamp);
    constexpr float hi = 1.0f - static_cast<float>(kProbabilityClamp);
    for (auto& v : p.values) v = std::clamp(v, lo, hi);
    return p;
  }
  ImageTensor predict(const ImageTensor& image) const {
    Workspace<float> ws;
    return predict(image, ws);
  }

  const Network<float>& network() const { return net_; }

 private:
  Network<float> net_;
};

// Probability map in (0,1), clamped to [1e-7, 1-1e-7].
inline ImageTensor predict(const ModelGraph& graph, const Checkpoint& ckpt, const ImageTensor& image) {
  return Predictor(graph, ckpt).predict(image);
}

// Strict rule: value > threshold -> 1, otherwise 0.
inline ImageTensor binarize(const ImageTensor& prob, float threshold = 0.5f) {
  ImageTensor out(prob.shape);
  for (std::size_t i = 0; i < prob.size(); ++i) out.values[i] = prob.values[i] > threshold ? 1.0f : 0.0f;
  return out;
}

}  // namespace ftunet
