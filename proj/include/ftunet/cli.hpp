#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ftunet/actmax.hpp"
#include "ftunet/config.hpp"
#include "ftunet/experiment.hpp"
#include "ftunet/plot.hpp"
#include "ftunet/version.hpp"

namespace ftunet::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Collects provenance while a command runs and writes run-manifest.json.
class RunRecorder {
 public:
  RunRecorder(std::string command, std::vector<std::string> argv, fs::path out)
      : command_(std::move(command)), argv_(std::move(argv)), out_(std::move(out)), t0_(clock::now()) {}

  const fs::path& out() const { return out_; }

  template <class Fn>
  auto timed(const std::string& phase, Fn&& fn) {
    const auto t = clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      timings_[phase] = seconds(t);
    } else {
      auto r = fn();
      timings_[phase] = seconds(t);
      return r;
    }
  }

  fs::path output(const std::string& name) {
    outputs_.push_back(name);
    return out_ / name;
  }
  void seed(const std::string& name, std::uint64_t v) { seeds_[name] = v; }
  void note(const std::string& key, nlohmann::json v) { extra_[key] = std::move(v); }

  void write(const RunConfig* cfg, const std::string& status) {
    nlohmann::json m{{"command", command_},
                     {"argv", argv_},
                     {"version", kVersion},
                     {"status", status},
                     {"deterministic_mode", deterministic_mode()},
                     {"seeds", seeds_},
                     {"timings_seconds", timings_},
                     {"wall_clock_seconds", seconds(t0_)},
                     {"started_at_utc", started_},
                     {"outputs", outputs_}};
    if (cfg) {
      m["config_hash"] = config_hash(cfg->document);
      m["config"] = cfg->document;
    }
    for (const auto& [k, v] : extra_.items()) m[k] = v;
    std::ofstream(out_ / "run-manifest.json") << m.dump(2) << '\n';
  }

  void stamp() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    started_ = buf;
  }

 private:
  using clock = std::chrono::steady_clock;
  static double seconds(clock::time_point t) { return std::chrono::duration<double>(clock::now() - t).count(); }

  std::string command_;
  std::vector<std::string> argv_;
  fs::path out_;
  clock::time_point t0_;
  std::string started_;
  nlohmann::json seeds_ = nlohmann::json::object();
  nlohmann::json timings_ = nlohmann::json::object();
  nlohmann::json extra_ = nlohmann::json::object();
  std::vector<std::string> outputs_;
};

namespace detail {

inline void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2) << '\n'; }

inline void write_rows(const fs::path& p, const std::vector<MetricRow>& rows) {
  std::ofstream out(p);
  write_metric_rows(out, rows);
}

inline void write_training_log(const fs::path& p, const Checkpoint& c) {
  std::ofstream out(p);
  out << "epoch,train_loss,validation_loss\n" << std::setprecision(10);
  for (const auto& e : c.training_log) {
    out << e.epoch << ',' << e.train_loss << ',';
    if (e.validation_loss) out << *e.validation_loss;
    out << '\n';
  }
}

inline std::vector<int> parse_grid(const std::string& s) {
  std::vector<int> g;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      g.push_back(std::stoi(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw ConfigError("--grid: \"" + cell + "\" is not an integer");
    }
  }
  if (g.empty()) throw ConfigError("--grid: empty");
  return g;
}

inline SampleSet load_dataset(const RunConfig& c, const std::string& role) {
  return c.dataset(role).load(c.architecture.input_height, c.architecture.input_width);
}

// Reads <dir>/<id>.png for every case, resampled to the given size.
inline std::vector<ImageTensor> read_mask_dir(const fs::path& dir, const SampleSet& cases, int h, int w) {
  std::vector<ImageTensor> out;
  for (const auto& s : cases) {
    fs::path p;
    for (const char* ext : {".png", ".bmp", ".tif", ".tiff"})
      if (fs::exists(dir / (s.id + ext))) {
        p = dir / (s.id + ext);
        break;
      }
    if (p.empty()) throw IngestionError("prediction for " + s.id + " not found in " + dir.string());
    out.push_back(preprocess_mask(read_raw_image(p), h, w));
  }
  return out;
}

inline const char* usage() {
  return "usage: ftunet <command> [options]\n"
         "commands: pretrain finetune two-part sweep epochs evaluate vis-activation plot panel\n"
         "run 'ftunet <command> --help' for the options of a command\n";
}

}  // namespace detail

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string direction;
  std::string grid;
  std::optional<int> layer;
  std::optional<int> unit;
  std::vector<std::string> sweep_csv;
  std::string cases;
  std::vector<std::string> pred_dirs;
  int size = 0;
};

// Validation happens in prepare(); run() does the work. Errors thrown by
// prepare() map to exit code 2 and leave the file system untouched.
struct Prepared {
  std::optional<RunConfig> config;
  fs::path out;
  std::function<void(RunRecorder&)> run;
};

inline RunConfig require_config(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config: required");
  return load_run_config(o.config, o.seed,
                         o.out.empty() ? std::nullopt : std::optional<fs::path>(fs::absolute(o.out)));
}

inline Checkpoint obtain_pretrained(const RunConfig& c, const ModelGraph& g, RunRecorder& rec) {
  if (c.pretrained_checkpoint) {
    Checkpoint ck = load_checkpoint(*c.pretrained_checkpoint, g);
    rec.note("pretrained_checkpoint", {{"path", c.pretrained_checkpoint->string()}, {"id", ck.id()}});
    return ck;
  }
  const SampleSet data = rec.timed("load_pretrain_data", [&] { return detail::load_dataset(c, "pretrain"); });
  rec.seed("pretrain", c.pretrain.seed);
  Checkpoint ck = rec.timed("pretrain", [&] { return pretrain(g, data, c.pretrain); });
  save_checkpoint(ck, rec.output("pretrained.ftck"));
  detail::write_training_log(rec.output("pretrain_log.csv"), ck);
  rec.note("pretrained_checkpoint", {{"path", (rec.out() / "pretrained.ftck").string()}, {"id", ck.id()}});
  return ck;
}

inline ExperimentPlan experiment_plan(const RunConfig& c, const ModelGraph& g, RunRecorder& rec) {
  ExperimentPlan p;
  p.graph = g;
  p.pretrained = obtain_pretrained(c, g, rec);
  p.dataset = rec.timed("load_target_data", [&] { return detail::load_dataset(c, "target"); });
  p.fold_count = c.fold_count;
  p.finetune_config = c.finetune;
  p.augmentation = c.augmentation;
  p.schedules = c.schedules;
  p.seed = c.seed;
  p.concurrent_folds = c.concurrent_folds;
  if (c.save_checkpoints) p.checkpoint_dir = rec.output("checkpoints");
  rec.seed("master", c.seed);
  rec.seed("folds", c.seed);
  if (c.augmentation) rec.seed("augmentation", c.augmentation->seed);
  return p;
}

inline void write_experiment(RunRecorder& rec, const ExperimentResult& r, nlohmann::json summary) {
  detail::write_rows(rec.output("results.csv"), r.rows());
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) cells.push_back(c);
  summary["metadata"] = r.metadata;
  summary["runs"] = cells;
  detail::write_json(rec.output("summary.json"), summary);
  rec.note("runs", cells);
}

inline nlohmann::json schedule_summaries(const ExperimentResult& r) {
  nlohmann::json s = nlohmann::json::array();
  for (const auto& x : r.schedules) s.push_back(x);
  return s;
}

inline Prepared prepare(const std::string& cmd, const Options& o) {
  Prepared p;
  if (cmd == "plot" || cmd == "panel") {
    if (!o.config.empty()) p.config = require_config(o);
    if (!o.out.empty())
      p.out = fs::absolute(o.out);
    else if (p.config)
      p.out = p.config->output_dir;
    else
      throw ConfigError("--out: required when no --config is given");
  } else {
    p.config = require_config(o);
    p.out = p.config->output_dir;
  }
  const RunConfig* c = p.config ? &*p.config : nullptr;
  const ModelGraph graph = c ? build_unet(c->architecture) : ModelGraph{};

  if (cmd == "pretrain") {
    c->dataset("pretrain");
    p.run = [cfg = *c, graph](RunRecorder& rec) {
      auto copy = cfg;
      copy.pretrained_checkpoint.reset();
      obtain_pretrained(copy, graph, rec);
    };
  } else if (cmd == "finetune") {
    c->dataset("target");
    if (!c->pretrained_checkpoint) c->dataset("pretrain");
    if (c->schedules.size() > 1) throw ConfigError("experiment.schedules: finetune takes a single schedule");
    p.run = [cfg = *c, graph](RunRecorder& rec) {
      const Checkpoint init = obtain_pretrained(cfg, graph, rec);
      const SampleSet data = rec.timed("load_target_data", [&] { return detail::load_dataset(cfg, "target"); });
      const FreezePlan plan = cfg.schedules.empty() ? make_full_plan(enumerate_blocks(graph)) : cfg.schedules[0];
      SampleSet train = data;
      if (cfg.augmentation) train = augment_dataset(data, *cfg.augmentation).samples;
      rec.seed("finetune", cfg.finetune.seed);
      const Checkpoint ck = rec.timed("finetune", [&] { return finetune(graph, init, plan, train, cfg.finetune); });
      save_checkpoint(ck, rec.output("finetuned.ftck"));
      detail::write_training_log(rec.output("finetune_log.csv"), ck);
      rec.note("finetuned_checkpoint", {{"id", ck.id()}, {"plan", plan}, {"training_samples", train.size()}});
    };
  } else if (cmd == "two-part") {
    c->dataset("target");
    if (!c->pretrained_checkpoint) c->dataset("pretrain");
    p.run = [cfg = *c, graph](RunRecorder& rec) {
      const auto plan = experiment_plan(cfg, graph, rec);
      const auto r = rec.timed("experiment", [&] { return run_two_part_experiment(plan); });
      write_experiment(rec, r, {{"experiment", "two-part"}, {"schedules", schedule_summaries(r)}});
    };
  } else if (cmd == "sweep") {
    c->dataset("target");
    if (!c->pretrained_checkpoint) c->dataset("pretrain");
    SweepDirection dir;
    if (o.direction == "shallow" || o.direction == "shallow_to_deep")
      dir = SweepDirection::shallow_to_deep;
    else if (o.direction == "deep" || o.direction == "deep_to_shallow")
      dir = SweepDirection::deep_to_shallow;
    else
      throw ConfigError("--direction: must be shallow or deep");
    p.run = [cfg = *c, graph, dir](RunRecorder& rec) {
      const auto plan = experiment_plan(cfg, graph, rec);
      const auto s = rec.timed("experiment", [&] { return run_block_sweep(plan, dir); });
      write_experiment(rec, s.experiment, {{"experiment", "sweep"}, {"sweep", s},
                                           {"schedules", schedule_summaries(s.experiment)}});
      write_png(render_sweep({sweep_curve(s)}), rec.output(std::string("sweep_") + to_string(dir) + ".png"));
    };
  } else if (cmd == "epochs") {
    c->dataset("target");
    if (!c->pretrained_checkpoint) c->dataset("pretrain");
    std::vector<int> grid = o.grid.empty() ? c->epoch_grid : detail::parse_grid(o.grid);
    if (grid.empty()) throw ConfigError("--grid: required (or experiment.epoch_grid)");
    for (std::size_t i = 1; i < grid.size(); ++i)
      if (grid[i] <= grid[i - 1]) throw ConfigError("--grid: must be strictly increasing");
    if (grid.front() != c->finetune.epochs)
      throw ConfigError("--grid: first entry must equal finetune.epochs (" + std::to_string(c->finetune.epochs) + ")");
    p.run = [cfg = *c, graph, grid](RunRecorder& rec) {
      auto plan = experiment_plan(cfg, graph, rec);
      if (plan.schedules.empty())
        plan.schedules = {make_cumulative_plan(SweepDirection::deep_to_shallow, 1, enumerate_blocks(graph))};
      const auto r = rec.timed("experiment", [&] { return run_epoch_sensitivity(plan, grid); });
      detail::write_rows(rec.output("results.csv"), r.rows());
      nlohmann::json cells = nlohmann::json::array();
      for (const auto& cell : r.cells) cells.push_back(cell);
      detail::write_json(rec.output("summary.json"),
                         {{"experiment", "epochs"}, {"report", r}, {"metadata", r.metadata}, {"runs", cells}});
    };
  } else if (cmd == "evaluate") {
    c->dataset("target");
    if (!c->predictions && !c->evaluate_checkpoint)
      throw ConfigError("evaluate.predictions: required (or evaluate.checkpoint)");
    p.run = [cfg = *c, graph](RunRecorder& rec) {
      const SampleSet cases = rec.timed("load_target_data", [&] { return detail::load_dataset(cfg, "target"); });
      std::vector<ImageTensor> preds;
      std::string source;
      if (cfg.predictions) {
        source = cfg.predictions->string();
        preds = detail::read_mask_dir(*cfg.predictions, cases, cfg.architecture.input_height,
                                      cfg.architecture.input_width);
      } else {
        source = cfg.evaluate_checkpoint->string();
        const Predictor predictor(graph, load_checkpoint(*cfg.evaluate_checkpoint, graph));
        fs::create_directories(rec.output("predictions"));
        rec.timed("predict", [&] {
          Workspace<float> ws;
          for (const auto& s : cases) {
            preds.push_back(binarize(predictor.predict(s.image, ws)));
            write_image(preds.back(), rec.out() / "predictions" / (s.id + ".png"));
          }
        });
      }
      std::vector<MetricRow> rows;
      std::vector<MetricTriple> per_image;
      for (std::size_t i = 0; i < cases.size(); ++i) {
        per_image.push_back(evaluate_masks(preds[i], cases[i].mask));
        rows.push_back({cases[i].id, "evaluate", 0, 0, per_image.back()});
      }
      detail::write_rows(rec.output("results.csv"), rows);
      nlohmann::json s{{"experiment", "evaluate"}, {"source", source}, {"cases", cases.size()}};
      if (!per_image.empty()) s["mean"] = average(per_image);
      s["adjusted_rand_estimator"] = "Hubert-Arabie (hypergeometric expectation)";
      detail::write_json(rec.output("summary.json"), s);
    };
  } else if (cmd == "vis-activation") {
    ActMaxConfig a = c->activation;
    if (o.layer) a.layer_index = *o.layer;
    if (o.unit) a.unit_index = *o.unit;
    const auto ckpt_path = c->evaluate_checkpoint ? c->evaluate_checkpoint : c->pretrained_checkpoint;
    if (!ckpt_path) throw ConfigError("experiment.pretrained_checkpoint: required (or evaluate.checkpoint)");
    if (graph.conv_layer(a.layer_index) < 0)
      throw ConfigError("--layer: must lie in [1, " + std::to_string(graph.conv3x3_count()) + "]");
    const int units = graph.layers[graph.conv_layer(a.layer_index)].out_channels;
    if (a.unit_index < 0 || a.unit_index >= units)
      throw ConfigError("--unit: must lie in [0, " + std::to_string(units) + ")");
    p.run = [graph, a, path = *ckpt_path](RunRecorder& rec) {
      const Checkpoint ck = load_checkpoint(path, graph);
      rec.seed("activation", a.seed);
      const auto r = rec.timed("activation_maximization", [&] { return activation_maximization(graph, ck, a); });
      const std::string stem = "actmax_l" + std::to_string(a.layer_index) + "_u" + std::to_string(a.unit_index);
      write_image(r.image, rec.output(stem + ".png"));
      detail::write_json(rec.output(stem + ".json"),
                         {{"config", a}, {"checkpoint", ck.id()}, {"objective", "spatial-mean pre-activation"},
                          {"trace", r.trace}});
    };
  } else if (cmd == "plot") {
    if (o.sweep_csv.empty()) throw ConfigError("--sweep: at least one results.csv is required");
    for (const auto& f : o.sweep_csv)
      if (!fs::exists(f)) throw ConfigError("--sweep: does not exist: " + f);
    p.run = [files = o.sweep_csv](RunRecorder& rec) {
      std::vector<SweepCurve> curves;
      for (const auto& f : files) {
        std::ifstream in(f);
        for (auto& cv : sweep_curves(read_metric_rows(in, f))) curves.push_back(std::move(cv));
      }
      write_png(render_sweep(curves), rec.output("sweep.png"));
      rec.note("inputs", files);
    };
  } else if (cmd == "panel") {
    if (o.cases.empty()) throw ConfigError("--cases: required");
    if (!fs::exists(o.cases)) throw ConfigError("--cases: does not exist: " + o.cases);
    for (const auto& d : o.pred_dirs)
      if (!fs::is_directory(d)) throw ConfigError("--pred: not a directory: " + d);
    const int cell = o.size > 0 ? o.size : (c ? c->architecture.input_height : 128);
    p.run = [o, cell](RunRecorder& rec) {
      const auto manifest = load_manifest(o.cases);
      const SampleSet cases = load_samples(manifest, cell, cell);
      std::vector<ImageTensor> images, gt;
      for (const auto& s : cases) {
        images.push_back(s.image);
        gt.push_back(s.mask);
      }
      std::vector<PredictionSet> sets;
      for (const auto& d : o.pred_dirs) {
        const fs::path dir = fs::path(d).lexically_normal();
        const std::string label = (dir.filename().empty() ? dir.parent_path() : dir).filename().string();
        sets.push_back({label, detail::read_mask_dir(dir, cases, cell, cell)});
      }
      write_png(render_panel(images, gt, sets, cell), rec.output("panel.png"));
    };
  } else {
    throw ConfigError("unknown command: " + cmd);
  }
  return p;
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Layer-selective U-Net fine-tuning harness", "ftunet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;

  auto common = [&](CLI::App* sc, bool config_required) {
    auto* opt = sc->add_option("--config", o.config, "run config (JSON)");
    if (config_required) opt->required();
    sc->add_option("--out", o.out, "output directory (overrides output_dir)");
    sc->add_option("--seed", o.seed, "master seed override");
  };
  common(app.add_subcommand("pretrain", "pre-train every block on datasets.pretrain"), true);
  common(app.add_subcommand("finetune", "fine-tune one schedule on all of datasets.target"), true);
  common(app.add_subcommand("two-part", "cross-validated contracting vs expanding comparison"), true);
  auto* sweep = app.add_subcommand("sweep", "cross-validated cumulative block sweep");
  common(sweep, true);
  sweep->add_option("--direction", o.direction, "shallow or deep")->required();
  auto* epochs = app.add_subcommand("epochs", "epoch-sensitivity check by resumed training");
  common(epochs, true);
  epochs->add_option("--grid", o.grid, "comma-separated epoch counts, e.g. 20,40");
  common(app.add_subcommand("evaluate", "metrics of a prediction directory or checkpoint against datasets.target"),
         true);
  auto* vis = app.add_subcommand("vis-activation", "activation maximization for one unit");
  common(vis, true);
  vis->add_option("--layer", o.layer, "1-based conv3x3 ordinal");
  vis->add_option("--unit", o.unit, "0-based filter index");
  auto* plot = app.add_subcommand("plot", "sweep curves from results.csv files");
  common(plot, false);
  plot->add_option("--sweep", o.sweep_csv, "results.csv of one or more sweeps")->required();
  auto* panel = app.add_subcommand("panel", "qualitative grid: image, ground truth, predictions");
  common(panel, false);
  panel->add_option("--cases", o.cases, "manifest or dataset directory")->required();
  panel->add_option("--pred", o.pred_dirs, "prediction directories (<id>.png)");
  panel->add_option("--size", o.size, "cell size in pixels");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const auto subs = app.get_subcommands([](const CLI::App*) { return true; });
    if (std::none_of(subs.begin(), subs.end(), [&](const CLI::App* a) { return a->get_name() == name; })) {
      err << "ftunet: unknown command '" << name << "'\n" << detail::usage();
      return kExitUsage;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << detail::usage();
    return kExitUsage;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  std::vector<std::string> args(argv, argv + argc);

  Prepared prep;
  try {
    prep = prepare(cmd, o);
  } catch (const std::exception& e) {
    err << "ftunet " << cmd << ": " << e.what() << '\n';
    return kExitUsage;
  }

  configure_determinism();
  fs::create_directories(prep.out);
  RunRecorder rec(cmd, args, prep.out);
  rec.stamp();
  if (prep.config) {
    detail::write_json(rec.output("config.json"), prep.config->document);
    rec.seed("master", prep.config->seed);
  }
  try {
    prep.run(rec);
  } catch (const std::exception& e) {
    err << "ftunet " << cmd << ": " << e.what() << '\n';
    rec.note("error", e.what());
    rec.write(prep.config ? &*prep.config : nullptr, "failed");
    return kExitRuntime;
  }
  rec.write(prep.config ? &*prep.config : nullptr, "ok");
  out << "ftunet " << cmd << ": wrote " << prep.out.string() << '\n';
  return kExitOk;
}

}  // namespace ftunet::cli
