#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftunet/actmax.hpp"
#include "ftunet/architecture.hpp"
#include "ftunet/augment.hpp"
#include "ftunet/blocks.hpp"
#include "ftunet/dataset.hpp"
#include "ftunet/error.hpp"
#include "ftunet/graph.hpp"
#include "ftunet/hash.hpp"
#include "ftunet/synthetic.hpp"
#include "ftunet/train.hpp"

namespace ftunet {

// Either a manifest/directory on disk or a generated synthetic set.
struct DatasetSource {
  std::string name;
  std::filesystem::path path;
  Modality modality = Modality::synthetic;
  std::optional<SyntheticKind> synthetic;
  std::size_t count = 0;
  std::uint64_t seed = 0;

  SampleSet load(int height, int width) const {
    if (synthetic) return synthetic_dataset(*synthetic, count, height, width, seed);
    return load_samples(load_manifest(path, modality), height, width);
  }
};

struct RunConfig {
  nlohmann::json document;  // effective config, paths as written
  std::filesystem::path base_dir;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  ArchitectureSpec architecture;
  std::map<std::string, DatasetSource> datasets;
  std::optional<AugmentationConfig> augmentation;
  TrainConfig pretrain;
  TrainConfig finetune;
  int fold_count = 5;
  int concurrent_folds = 1;
  std::vector<FreezePlan> schedules;
  std::vector<int> epoch_grid;
  std::optional<std::filesystem::path> pretrained_checkpoint;
  bool save_checkpoints = true;
  ActMaxConfig activation;
  std::optional<std::filesystem::path> predictions;
  std::optional<std::filesystem::path> evaluate_checkpoint;

  const DatasetSource& dataset(const std::string& role) const {
    auto it = datasets.find(role);
    if (it == datasets.end()) throw ConfigError("datasets." + role + ": required by this command");
    return it->second;
  }
};

namespace detail {

template <class V>
void read_field(const nlohmann::json& j, const std::string& field, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(field + "." + key + ": wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::string& field, const std::set<std::string>& known) {
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError((field.empty() ? k : field + "." + k) + ": unknown key");
}

inline void require_object(const nlohmann::json& j, const std::string& field) {
  if (!j.is_object()) throw ConfigError(field + ": must be an object");
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline DatasetSource parse_dataset(const nlohmann::json& j, const std::string& field,
                                   const std::filesystem::path& base, std::uint64_t master) {
  require_object(j, field);
  reject_unknown(j, field, {"path", "modality", "synthetic", "count", "seed"});
  DatasetSource d;
  d.name = field.substr(field.find('.') + 1);
  if (j.contains("modality")) {
    if (!j.at("modality").is_string()) throw ConfigError(field + ".modality: wrong type");
    const auto m = j.at("modality").get<std::string>();
    static const std::set<std::string> names{"natural", "ultrasound", "xray", "synthetic"};
    if (!names.contains(m)) throw ConfigError(field + ".modality: must be one of natural, ultrasound, xray, synthetic");
    d.modality = j.at("modality").get<Modality>();
  }
  if (j.contains("synthetic")) {
    if (j.contains("path")) throw ConfigError(field + ": give either path or synthetic, not both");
    const auto kind = j.at("synthetic").is_string() ? j.at("synthetic").get<std::string>() : std::string();
    if (kind != "blobs" && kind != "speckle") throw ConfigError(field + ".synthetic: must be \"blobs\" or \"speckle\"");
    d.synthetic = kind == "blobs" ? SyntheticKind::blobs : SyntheticKind::speckle;
    if (!j.contains("count")) throw ConfigError(field + ".count: required for synthetic datasets");
    read_field(j, field, "count", d.count);
    if (d.count == 0) throw ConfigError(field + ".count: must be >= 1");
    d.seed = derive_seed({master, hash_string(field)});
    read_field(j, field, "seed", d.seed);
    if (!j.contains("modality")) d.modality = kind == "speckle" ? Modality::ultrasound : Modality::natural;
    return d;
  }
  if (!j.contains("path") || !j.at("path").is_string()) throw ConfigError(field + ".path: required string");
  d.path = resolve(base, j.at("path").get<std::string>());
  if (!std::filesystem::exists(d.path)) throw ConfigError(field + ".path: does not exist: " + d.path.string());
  return d;
}

inline FreezePlan parse_schedule(const nlohmann::json& j, const std::string& field,
                                 const std::vector<LayerBlock>& blocks) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "contracting") return make_two_part_plan(NetworkPart::contracting, blocks);
    if (s == "expanding") return make_two_part_plan(NetworkPart::expanding, blocks);
    if (s == "all") return make_full_plan(blocks);
    throw ConfigError(field + ": unknown schedule \"" + s + "\" (contracting, expanding, all)");
  }
  require_object(j, field);
  try {
    if (j.contains("direction")) {
      reject_unknown(j, field, {"direction", "k"});
      const auto d = j.at("direction").get<std::string>();
      SweepDirection dir;
      if (d == "shallow_to_deep" || d == "shallow")
        dir = SweepDirection::shallow_to_deep;
      else if (d == "deep_to_shallow" || d == "deep")
        dir = SweepDirection::deep_to_shallow;
      else
        throw ConfigError(field + ".direction: must be shallow_to_deep or deep_to_shallow");
      const int k = j.at("k").get<int>();
      if (k < 1 || k > static_cast<int>(blocks.size()))
        throw ConfigError(field + ".k: must lie in [1, " + std::to_string(blocks.size()) + "]");
      return make_cumulative_plan(dir, k, blocks);
    }
    reject_unknown(j, field, {"trainable_blocks", "label"});
    const auto set = j.at("trainable_blocks").get<std::set<int>>();
    for (int b : set)
      if (b < 1 || b > static_cast<int>(blocks.size()))
        throw ConfigError(field + ".trainable_blocks: block " + std::to_string(b) + " does not exist");
    if (set.empty()) throw ConfigError(field + ".trainable_blocks: must not be empty");
    return FreezePlan(set, j.value("label", std::string("custom")));
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(field + ": malformed schedule");
  }
}

}  // namespace detail

// Parses and validates a run config. Nothing is written; the first invalid
// field is named in the ConfigError message.
inline RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                                  std::optional<std::uint64_t> seed_override = std::nullopt,
                                  std::optional<std::filesystem::path> out_override = std::nullopt) {
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  detail::reject_unknown(doc, "", {"seed", "output_dir", "architecture", "datasets", "augmentation", "pretrain",
                                   "finetune", "experiment", "activation", "evaluate", "description"});
  RunConfig c;
  c.document = doc;
  c.base_dir = base_dir;
  if (!doc.contains("seed") && !seed_override) throw ConfigError("seed: required (no implicit randomness)");
  if (doc.contains("seed")) detail::read_field(doc, "config", "seed", c.seed);
  if (seed_override) {
    c.seed = *seed_override;
    c.document["seed"] = c.seed;
  }
  if (out_override) {
    c.output_dir = *out_override;
  } else if (doc.contains("output_dir")) {
    if (!doc.at("output_dir").is_string()) throw ConfigError("output_dir: wrong type");
    c.output_dir = detail::resolve(base_dir, doc.at("output_dir").get<std::string>());
  } else {
    throw ConfigError("output_dir: required (or pass --out)");
  }

  if (doc.contains("architecture")) {
    detail::require_object(doc.at("architecture"), "architecture");
    detail::reject_unknown(doc.at("architecture"), "architecture",
                           {"input_height", "input_width", "input_channels", "depth", "base_filters", "dropout_rate",
                            "upsample_mode", "final_activation"});
    doc.at("architecture").get_to(c.architecture);
  }
  c.architecture.validate();
  if (c.architecture.input_channels != 1) throw ConfigError("architecture.input_channels: datasets are grayscale, use 1");
  const auto blocks = enumerate_blocks(build_unet(c.architecture));

  if (doc.contains("datasets")) {
    detail::require_object(doc.at("datasets"), "datasets");
    for (const auto& [role, j] : doc.at("datasets").items())
      c.datasets[role] = detail::parse_dataset(j, "datasets." + role, base_dir, c.seed);
  }

  if (doc.contains("augmentation") && !doc.at("augmentation").is_null()) {
    detail::require_object(doc.at("augmentation"), "augmentation");
    detail::reject_unknown(doc.at("augmentation"), "augmentation",
                           {"rotation_max", "shift_max", "shear_max", "zoom_range", "allow_horizontal_flip",
                            "target_total", "seed"});
    auto a = augmentation_from_json(doc.at("augmentation"));
    if (!doc.at("augmentation").contains("seed")) a.seed = derive_seed({c.seed, hash_string("augmentation")});
    a.validate(0);
    c.augmentation = a;
  }

  TrainConfig pre_defaults;
  pre_defaults.epochs = 40;
  pre_defaults.validation_fraction = 0.1;
  pre_defaults.seed = derive_seed({c.seed, hash_string("pretrain")});
  const std::set<std::string> train_keys{"epochs", "batch_size", "learning_rate", "validation_fraction",
                                         "loss", "seed", "beta1", "beta2", "epsilon"};
  c.pretrain = pre_defaults;
  if (doc.contains("pretrain")) {
    detail::require_object(doc.at("pretrain"), "pretrain");
    detail::reject_unknown(doc.at("pretrain"), "pretrain", train_keys);
    c.pretrain = train_config_from_json(doc.at("pretrain"), "pretrain", pre_defaults);
  }
  c.pretrain.validate("pretrain");
  TrainConfig ft_defaults;
  ft_defaults.seed = c.seed;
  c.finetune = ft_defaults;
  if (doc.contains("finetune")) {
    detail::require_object(doc.at("finetune"), "finetune");
    detail::reject_unknown(doc.at("finetune"), "finetune", train_keys);
    c.finetune = train_config_from_json(doc.at("finetune"), "finetune", ft_defaults);
  }
  c.finetune.validate("finetune");

  if (doc.contains("experiment")) {
    const auto& e = doc.at("experiment");
    detail::require_object(e, "experiment");
    detail::reject_unknown(e, "experiment", {"fold_count", "concurrent_folds", "schedules", "epoch_grid",
                                             "pretrained_checkpoint", "save_checkpoints"});
    detail::read_field(e, "experiment", "fold_count", c.fold_count);
    detail::read_field(e, "experiment", "concurrent_folds", c.concurrent_folds);
    detail::read_field(e, "experiment", "save_checkpoints", c.save_checkpoints);
    if (e.contains("schedules")) {
      if (!e.at("schedules").is_array()) throw ConfigError("experiment.schedules: must be a list");
      for (std::size_t i = 0; i < e.at("schedules").size(); ++i)
        c.schedules.push_back(
            detail::parse_schedule(e.at("schedules")[i], "experiment.schedules[" + std::to_string(i) + "]", blocks));
    }
    detail::read_field(e, "experiment", "epoch_grid", c.epoch_grid);
    if (e.contains("pretrained_checkpoint")) {
      if (!e.at("pretrained_checkpoint").is_string()) throw ConfigError("experiment.pretrained_checkpoint: wrong type");
      c.pretrained_checkpoint = detail::resolve(base_dir, e.at("pretrained_checkpoint").get<std::string>());
      if (!std::filesystem::exists(*c.pretrained_checkpoint))
        throw ConfigError("experiment.pretrained_checkpoint: does not exist: " + c.pretrained_checkpoint->string());
    }
  }
  if (c.fold_count < 2) throw ConfigError("experiment.fold_count: must be >= 2");
  if (c.concurrent_folds < 1) throw ConfigError("experiment.concurrent_folds: must be >= 1");
  for (std::size_t i = 0; i < c.epoch_grid.size(); ++i) {
    if (c.epoch_grid[i] < 1) throw ConfigError("experiment.epoch_grid: entries must be >= 1");
    if (i > 0 && c.epoch_grid[i] <= c.epoch_grid[i - 1])
      throw ConfigError("experiment.epoch_grid: must be strictly increasing");
  }

  if (doc.contains("activation")) {
    const auto& a = doc.at("activation");
    detail::require_object(a, "activation");
    detail::reject_unknown(a, "activation",
                           {"layer_index", "unit_index", "steps", "step_size", "seed", "regularization_weight"});
    detail::read_field(a, "activation", "layer_index", c.activation.layer_index);
    detail::read_field(a, "activation", "unit_index", c.activation.unit_index);
    detail::read_field(a, "activation", "steps", c.activation.steps);
    detail::read_field(a, "activation", "step_size", c.activation.step_size);
    c.activation.seed = derive_seed({c.seed, hash_string("activation")});
    detail::read_field(a, "activation", "seed", c.activation.seed);
    detail::read_field(a, "activation", "regularization_weight", c.activation.regularization_weight);
  } else {
    c.activation.seed = derive_seed({c.seed, hash_string("activation")});
  }
  c.activation.validate();

  if (doc.contains("evaluate")) {
    const auto& ev = doc.at("evaluate");
    detail::require_object(ev, "evaluate");
    detail::reject_unknown(ev, "evaluate", {"predictions", "checkpoint"});
    for (const char* key : {"predictions", "checkpoint"}) {
      if (!ev.contains(key)) continue;
      if (!ev.at(key).is_string()) throw ConfigError(std::string("evaluate.") + key + ": wrong type");
      const auto p = detail::resolve(base_dir, ev.at(key).get<std::string>());
      if (!std::filesystem::exists(p)) throw ConfigError(std::string("evaluate.") + key + ": does not exist: " + p.string());
      (std::string(key) == "predictions" ? c.predictions : c.evaluate_checkpoint) = p;
    }
  }

  // Absolute paths so the effective document can be replayed from anywhere.
  for (const auto& [role, d] : c.datasets)
    if (!d.synthetic) c.document["datasets"][role]["path"] = std::filesystem::absolute(d.path).string();
  if (c.pretrained_checkpoint)
    c.document["experiment"]["pretrained_checkpoint"] = std::filesystem::absolute(*c.pretrained_checkpoint).string();
  if (c.predictions) c.document["evaluate"]["predictions"] = std::filesystem::absolute(*c.predictions).string();
  if (c.evaluate_checkpoint)
    c.document["evaluate"]["checkpoint"] = std::filesystem::absolute(*c.evaluate_checkpoint).string();
  c.document["output_dir"] = std::filesystem::absolute(c.output_dir).string();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> seed_override = std::nullopt,
                                 std::optional<std::filesystem::path> out_override = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_run_config(doc, std::filesystem::absolute(path).parent_path(), seed_override, out_override);
}

// Stable hash of the effective config document.
inline std::string config_hash(const nlohmann::json& doc) { return to_hex(hash_string(doc.dump())); }

}  // namespace ftunet
