#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ftunet/augment.hpp"
#include "ftunet/blocks.hpp"
#include "ftunet/checkpoint.hpp"
#include "ftunet/folds.hpp"
#include "ftunet/metrics.hpp"
#include "ftunet/train.hpp"

namespace ftunet {

struct ExperimentPlan {
  ModelGraph graph;
  SampleSet dataset;  // originals only
  Checkpoint pretrained;
  int fold_count = 5;
  TrainConfig finetune_config;
  std::optional<AugmentationConfig> augmentation;  // applied to each training split
  std::vector<FreezePlan> schedules;
  std::uint64_t seed = 0;
  int concurrent_folds = 1;
  std::filesystem::path checkpoint_dir;  // empty: checkpoints are not written
};

// One (schedule, fold) fine-tuning run.
struct CellRecord {
  std::size_t schedule_index = 0;
  std::string schedule_label;
  std::set<int> trainable_blocks;
  int fold = 0;
  std::uint64_t train_seed = 0;
  std::size_t training_samples = 0;
  std::size_t validation_samples = 0;
  std::string checkpoint_id;
  double seconds = 0.0;
  std::optional<MetricTriple> metrics;
  std::string error;

  int k() const { return static_cast<int>(trainable_blocks.size()); }
  std::string run_id() const { return schedule_label + "_k" + std::to_string(k()) + "_f" + std::to_string(fold); }
};

struct ScheduleSummary {
  FreezePlan plan;
  std::optional<MetricSummary> summary;  // over the folds that completed
  bool complete = false;
};

struct ExperimentResult {
  std::vector<ScheduleSummary> schedules;
  std::vector<CellRecord> cells;  // ordered by (schedule, fold)
  nlohmann::json metadata;

  std::vector<MetricRow> rows() const {
    std::vector<MetricRow> out;
    for (const auto& c : cells)
      if (c.metrics) out.push_back({c.run_id(), c.schedule_label, c.k(), c.fold, *c.metrics});
    return out;
  }
};

inline void to_json(nlohmann::json& j, const CellRecord& c) {
  j = nlohmann::json{{"run_id", c.run_id()},
                     {"schedule", c.schedule_label},
                     {"trainable_blocks", c.trainable_blocks},
                     {"fold", c.fold},
                     {"train_seed", c.train_seed},
                     {"training_samples", c.training_samples},
                     {"validation_samples", c.validation_samples},
                     {"checkpoint_id", c.checkpoint_id},
                     {"seconds", c.seconds}};
  if (c.metrics) j["metrics"] = *c.metrics;
  if (!c.error.empty()) j["error"] = c.error;
}

inline void to_json(nlohmann::json& j, const ScheduleSummary& s) {
  j = nlohmann::json{{"plan", s.plan}, {"complete", s.complete}};
  j["summary"] = s.summary ? nlohmann::json(*s.summary) : nlohmann::json(nullptr);
}

// Per-image metrics averaged over a set of validation samples.
inline MetricTriple evaluate_checkpoint(const ModelGraph& graph, const Checkpoint& ckpt, const SampleSet& samples) {
  if (samples.empty()) throw ArgumentError("no samples to evaluate");
  Predictor predictor(graph, ckpt);
  Workspace<float> ws;
  std::vector<MetricTriple> per_image;
  per_image.reserve(samples.size());
  for (const auto& s : samples) per_image.push_back(evaluate_masks(binarize(predictor.predict(s.image, ws)), s.mask));
  return average(per_image);
}

// Training seed for a run. Keyed by the trainable set rather than the label
// so that identical plans reached from different schedules train identically.
inline std::uint64_t run_seed(std::uint64_t master, const std::set<int>& trainable, int fold) {
  Fnv1a h;
  for (int b : trainable) h.u64(static_cast<std::uint64_t>(b));
  return derive_seed({master, hash_string("finetune"), h.value(), static_cast<std::uint64_t>(fold)});
}

namespace detail {

struct FoldData {
  SampleSet train;
  SampleSet validation;
  std::size_t train_originals = 0;
};

inline void validate_plan(const ExperimentPlan& p, bool need_schedules = true) {
  if (need_schedules && p.schedules.empty()) throw ArgumentError("experiment has no schedules");
  if (p.concurrent_folds < 1) throw ArgumentError("concurrent_folds must be >= 1");
  p.finetune_config.validate("finetune");
  require_compatible(p.pretrained, p.graph);
  for (const auto& s : p.dataset)
    if (!s.is_original()) throw ArgumentError("experiment datasets hold originals only; got " + s.id);
  const auto blocks = enumerate_blocks(p.graph);
  for (const auto& plan : p.schedules)
    for (int b : plan.trainable_blocks())
      if (b > static_cast<int>(blocks.size()))
        throw ArgumentError("schedule " + plan.label() + " references unknown block " + std::to_string(b));
  if (p.augmentation) {
    const std::size_t n = p.dataset.size();
    const std::size_t largest_train = n - n / static_cast<std::size_t>(std::max(p.fold_count, 1));
    p.augmentation->validate(largest_train);
  }
}

inline FoldData fold_data(const ExperimentPlan& p, const FoldAssignment& folds, int fold) {
  FoldData d;
  SampleSet originals = training_split(p.dataset, folds, fold);
  d.validation = validation_split(p.dataset, folds, fold);
  d.train_originals = originals.size();
  if (p.augmentation) {
    AugmentationConfig cfg = *p.augmentation;
    cfg.seed = derive_seed({p.augmentation->seed, hash_string("fold"), static_cast<std::uint64_t>(fold)});
    d.train = augment_dataset(originals, cfg).samples;
  } else {
    d.train = std::move(originals);
  }
  return d;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs fn(fold) for fold = 1..count, at most `width` at a time. Folds are
// claimed in order; fn is responsible for writing to its own slots.
template <class Fn>
void for_each_fold(int count, int width, Fn&& fn) {
  if (deterministic_mode()) width = 1;
  width = std::min(width, count);
  if (width <= 1) {
    for (int f = 1; f <= count; ++f) fn(f);
    return;
  }
  std::mutex m;
  int next = 1;
  std::vector<std::thread> pool;
  for (int t = 0; t < width; ++t)
    pool.emplace_back([&] {
      for (;;) {
        int f;
        {
          std::lock_guard lock(m);
          if (next > count) return;
          f = next++;
        }
        fn(f);
      }
    });
  for (auto& th : pool) th.join();
}

inline nlohmann::json plan_metadata(const ExperimentPlan& p, const FoldAssignment& folds) {
  nlohmann::json schedules = nlohmann::json::array();
  for (const auto& s : p.schedules) schedules.push_back(s);
  return {{"architecture", p.graph.spec},
          {"architecture_fingerprint", fingerprint(p.graph)},
          {"pretrained_checkpoint", p.pretrained.id()},
          {"fold_count", p.fold_count},
          {"fold_seed", p.seed},
          {"fold_assignment", folds.assignment},
          {"finetune_config", p.finetune_config},
          {"augmentation", p.augmentation ? nlohmann::json(*p.augmentation) : nlohmann::json(nullptr)},
          {"augmentation_policy", "re-augmented per training split; validation folds hold originals only"},
          {"run_seed_rule", "derive_seed(master, fnv1a(trainable blocks), fold)"},
          {"schedules", schedules},
          {"originals", p.dataset.size()}};
}

}  // namespace detail

// Fine-tunes every schedule on every fold from the shared pre-trained
// checkpoint and evaluates on the held-out originals. A failing cell is
// recorded with its error and left out of the summary.
inline ExperimentResult run_cross_validated(const ExperimentPlan& plan) {
  detail::validate_plan(plan);
  const auto t0 = std::chrono::steady_clock::now();
  const FoldAssignment folds = make_folds(plan.dataset, plan.fold_count, plan.seed);
  const std::size_t ns = plan.schedules.size();
  std::vector<CellRecord> cells(ns * static_cast<std::size_t>(plan.fold_count));
  std::mutex collector;
  if (!plan.checkpoint_dir.empty()) std::filesystem::create_directories(plan.checkpoint_dir);

  detail::for_each_fold(plan.fold_count, plan.concurrent_folds, [&](int fold) {
    std::optional<detail::FoldData> data;
    std::string data_error;
    try {
      data = detail::fold_data(plan, folds, fold);
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    for (std::size_t si = 0; si < ns; ++si) {
      const FreezePlan& sched = plan.schedules[si];
      CellRecord c;
      c.schedule_index = si;
      c.schedule_label = sched.label();
      c.trainable_blocks = sched.trainable_blocks();
      c.fold = fold;
      c.train_seed = run_seed(plan.seed, c.trainable_blocks, fold);
      const auto tc = std::chrono::steady_clock::now();
      try {
        if (!data) throw Error(data_error);
        c.training_samples = data->train.size();
        c.validation_samples = data->validation.size();
        TrainConfig cfg = plan.finetune_config;
        cfg.seed = c.train_seed;
        Checkpoint ck = finetune(plan.graph, plan.pretrained, sched, data->train, cfg);
        c.checkpoint_id = ck.id();
        if (!plan.checkpoint_dir.empty()) save_checkpoint(ck, plan.checkpoint_dir / (c.run_id() + ".ftck"));
        c.metrics = evaluate_checkpoint(plan.graph, ck, data->validation);
      } catch (const std::exception& e) {
        c.error = "schedule " + sched.label() + ", fold " + std::to_string(fold) + ": " + e.what();
        c.metrics.reset();
      }
      c.seconds = detail::seconds_since(tc);
      std::lock_guard lock(collector);
      cells[si * static_cast<std::size_t>(plan.fold_count) + static_cast<std::size_t>(fold - 1)] = std::move(c);
    }
  });

  ExperimentResult r;
  r.cells = std::move(cells);
  for (std::size_t si = 0; si < ns; ++si) {
    std::vector<MetricTriple> per_fold;
    for (int f = 0; f < plan.fold_count; ++f) {
      const auto& c = r.cells[si * static_cast<std::size_t>(plan.fold_count) + static_cast<std::size_t>(f)];
      if (c.metrics) per_fold.push_back(*c.metrics);
    }
    ScheduleSummary s{plan.schedules[si], std::nullopt, per_fold.size() == static_cast<std::size_t>(plan.fold_count)};
    if (!per_fold.empty()) s.summary = summarize(per_fold);
    r.schedules.push_back(std::move(s));
  }
  r.metadata = detail::plan_metadata(plan, folds);
  r.metadata["wall_clock_seconds"] = detail::seconds_since(t0);
  r.metadata["deterministic_mode"] = deterministic_mode();
  return r;
}

inline ExperimentResult run_two_part_experiment(ExperimentPlan plan) {
  const auto blocks = enumerate_blocks(plan.graph);
  plan.schedules = {make_two_part_plan(NetworkPart::contracting, blocks),
                    make_two_part_plan(NetworkPart::expanding, blocks)};
  return run_cross_validated(plan);
}

struct SweepPoint {
  int k = 0;
  FreezePlan plan;
  MetricSummary summary;
};

struct SweepResult {
  SweepDirection direction = SweepDirection::shallow_to_deep;
  std::vector<SweepPoint> points;
  ExperimentResult experiment;
};

inline void to_json(nlohmann::json& j, const SweepResult& s) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : s.points) pts.push_back({{"k", p.k}, {"plan", p.plan}, {"summary", p.summary}});
  j = nlohmann::json{{"direction", to_string(s.direction)}, {"points", pts}};
}

// One cross-validated run per k = 1..block count. A k whose folds all failed
// is omitted from the points and visible in experiment.cells.
inline SweepResult run_block_sweep(ExperimentPlan plan, SweepDirection direction) {
  const auto blocks = enumerate_blocks(plan.graph);
  plan.schedules.clear();
  for (int k = 1; k <= static_cast<int>(blocks.size()); ++k)
    plan.schedules.push_back(make_cumulative_plan(direction, k, blocks));
  SweepResult s;
  s.direction = direction;
  s.experiment = run_cross_validated(plan);
  for (const auto& sch : s.experiment.schedules)
    if (sch.summary) s.points.push_back({sch.plan.k(), sch.plan, *sch.summary});
  s.experiment.metadata["sweep_direction"] = to_string(direction);
  return s;
}

struct EpochPoint {
  int epochs = 0;
  std::optional<MetricSummary> summary;
  double dice_delta = 0.0;  // mean Dice minus mean Dice at the first grid point
};

struct EpochSensitivityRow {
  FreezePlan plan;
  std::vector<EpochPoint> points;
};

struct EpochSensitivityReport {
  std::vector<EpochSensitivityRow> schedules;
  std::vector<CellRecord> cells;  // one per (schedule, fold, grid point); k in the label is the plan size
  std::vector<int> grid;
  nlohmann::json metadata;

  std::vector<MetricRow> rows() const {
    std::vector<MetricRow> out;
    for (const auto& c : cells)
      if (c.metrics) out.push_back({c.run_id(), c.schedule_label, c.k(), c.fold, *c.metrics});
    return out;
  }
};

inline void to_json(nlohmann::json& j, const EpochSensitivityReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : r.schedules) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : s.points)
      pts.push_back({{"epochs", p.epochs},
                     {"dice_delta", p.dice_delta},
                     {"summary", p.summary ? nlohmann::json(*p.summary) : nlohmann::json(nullptr)}});
    rows.push_back({{"plan", s.plan}, {"points", pts}});
  }
  j = nlohmann::json{{"grid", r.grid}, {"schedules", rows}};
}

// Trains each (schedule, fold) to grid[0] epochs, then resumes with the saved
// optimizer state to each later grid point, evaluating at every point.
inline EpochSensitivityReport run_epoch_sensitivity(ExperimentPlan plan, const std::vector<int>& grid) {
  detail::validate_plan(plan);
  if (grid.empty()) throw ArgumentError("epoch grid is empty");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (grid[i] <= grid[i - 1]) throw ArgumentError("epoch grid must be strictly increasing");
  if (grid.front() != plan.finetune_config.epochs)
    throw ArgumentError("epoch grid must start at finetune.epochs (" + std::to_string(plan.finetune_config.epochs) +
                        ")");
  const auto t0 = std::chrono::steady_clock::now();
  const FoldAssignment folds = make_folds(plan.dataset, plan.fold_count, plan.seed);
  const std::size_t ns = plan.schedules.size(), ng = grid.size(), nf = static_cast<std::size_t>(plan.fold_count);
  std::vector<CellRecord> cells(ns * nf * ng);
  auto slot = [&](std::size_t si, int fold, std::size_t gi) { return (si * ng + gi) * nf + static_cast<std::size_t>(fold - 1); };
  std::mutex collector;

  detail::for_each_fold(plan.fold_count, plan.concurrent_folds, [&](int fold) {
    std::optional<detail::FoldData> data;
    std::string data_error;
    try {
      data = detail::fold_data(plan, folds, fold);
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    for (std::size_t si = 0; si < ns; ++si) {
      const FreezePlan& sched = plan.schedules[si];
      std::optional<Checkpoint> current;
      std::string failure;
      TrainConfig cfg = plan.finetune_config;
      cfg.seed = run_seed(plan.seed, sched.trainable_blocks(), fold);
      for (std::size_t gi = 0; gi < ng; ++gi) {
        CellRecord c;
        c.schedule_index = si;
        c.schedule_label = sched.label() + "_e" + std::to_string(grid[gi]);
        c.trainable_blocks = sched.trainable_blocks();
        c.fold = fold;
        c.train_seed = cfg.seed;
        const auto tc = std::chrono::steady_clock::now();
        try {
          if (!data) throw Error(data_error);
          if (!failure.empty()) throw Error("earlier grid point failed: " + failure);
          c.training_samples = data->train.size();
          c.validation_samples = data->validation.size();
          current = gi == 0 ? finetune(plan.graph, plan.pretrained, sched, data->train, cfg)
                            : resume_training(plan.graph, *current, data->train, cfg, grid[gi]);
          c.checkpoint_id = current->id();
          c.metrics = evaluate_checkpoint(plan.graph, *current, data->validation);
        } catch (const std::exception& e) {
          if (failure.empty()) failure = e.what();
          c.error = "schedule " + sched.label() + ", fold " + std::to_string(fold) + ", epochs " +
                    std::to_string(grid[gi]) + ": " + e.what();
        }
        c.seconds = detail::seconds_since(tc);
        std::lock_guard lock(collector);
        cells[slot(si, fold, gi)] = std::move(c);
      }
    }
  });

  EpochSensitivityReport r;
  r.grid = grid;
  for (std::size_t si = 0; si < ns; ++si) {
    EpochSensitivityRow row{plan.schedules[si], {}};
    for (std::size_t gi = 0; gi < ng; ++gi) {
      std::vector<MetricTriple> per_fold;
      for (int f = 1; f <= plan.fold_count; ++f)
        if (const auto& c = cells[slot(si, f, gi)]; c.metrics) per_fold.push_back(*c.metrics);
      EpochPoint p;
      p.epochs = grid[gi];
      if (!per_fold.empty()) p.summary = summarize(per_fold);
      row.points.push_back(p);
    }
    for (auto& p : row.points)
      if (p.summary && row.points.front().summary)
        p.dice_delta = p.summary->mean.dice - row.points.front().summary->mean.dice;
    r.schedules.push_back(std::move(row));
  }
  r.cells = std::move(cells);
  r.metadata = detail::plan_metadata(plan, folds);
  r.metadata["epoch_grid"] = grid;
  r.metadata["epoch_accounting"] = "resumed from the previous grid point with its optimizer state";
  r.metadata["wall_clock_seconds"] = detail::seconds_since(t0);
  r.metadata["deterministic_mode"] = deterministic_mode();
  return r;
}

}  // namespace ftunet
