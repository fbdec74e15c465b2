#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftunet/error.hpp"
#include "ftunet/tensor.hpp"

namespace ftunet {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion(const ImageTensor& pred, const ImageTensor& gt) {
  if (pred.shape != gt.shape) throw ArgumentError("prediction and ground-truth masks differ in shape");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const float p = pred.values[i], g = gt.values[i];
    if ((p != 0.0f && p != 1.0f) || (g != 0.0f && g != 1.0f)) throw ArgumentError("masks must be strictly binary");
    if (p == 1.0f)
      ++(g == 1.0f ? c.tp : c.fp);
    else
      ++(g == 1.0f ? c.fn : c.tn);
  }
  return c;
}

// 2TP / (2TP + FP + FN); two empty masks agree perfectly (1.0).
inline double dice(const ConfusionCounts& c) {
  const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

// Percentage of mislabeled pixels.
inline double pixel_error(const ConfusionCounts& c) {
  const auto n = c.total();
  return n == 0 ? 0.0 : 100.0 * static_cast<double>(c.fp + c.fn) / static_cast<double>(n);
}

// Chance-adjusted Rand index (Hubert-Arabie, hypergeometric expectation) of
// the two-cluster partitions induced by the masks, from the 2x2 contingency
// table. When the expected-index denominator vanishes the partitions are
// scored 1.0 if identical up to relabeling, else 0.0.
inline double adjusted_rand(const ConfusionCounts& c) {
  using real = long double;
  auto pairs = [](std::uint64_t k) -> real { return static_cast<real>(k) * static_cast<real>(k) / 2 - static_cast<real>(k) / 2; };
  const std::uint64_t n = c.total();
  const std::uint64_t cells[4] = {c.tp, c.fp, c.fn, c.tn};
  const std::uint64_t pred_sizes[2] = {c.tp + c.fp, c.fn + c.tn};
  const std::uint64_t gt_sizes[2] = {c.tp + c.fn, c.fp + c.tn};
  real index = 0, a = 0, b = 0;
  for (auto v : cells) index += pairs(v);
  for (auto v : pred_sizes) a += pairs(v);
  for (auto v : gt_sizes) b += pairs(v);
  const real all = pairs(n);
  const real expected = all > 0 ? a * b / all : 0;
  const real max_index = (a + b) / 2;
  const real denom = max_index - expected;
  if (std::fabs(static_cast<double>(denom)) < 1e-12) {
    // identical up to relabeling: the table is diagonal or anti-diagonal
    const bool one_to_one = (c.fp == 0 && c.fn == 0) || (c.tp == 0 && c.tn == 0);
    return one_to_one ? 1.0 : 0.0;
  }
  return static_cast<double>((index - expected) / denom);
}

inline double adjusted_rand(const ImageTensor& pred, const ImageTensor& gt) { return adjusted_rand(confusion(pred, gt)); }

struct MetricTriple {
  double dice = 0.0;
  double pixel_error_pct = 0.0;
  double adjusted_rand = 0.0;

  friend bool operator==(const MetricTriple&, const MetricTriple&) = default;
};

inline MetricTriple evaluate_masks(const ImageTensor& pred, const ImageTensor& gt) {
  const auto c = confusion(pred, gt);
  return {dice(c), pixel_error(c), adjusted_rand(c)};
}

// Per-image metrics averaged into one fold value.
inline MetricTriple average(std::span<const MetricTriple> values) {
  if (values.empty()) throw ArgumentError("cannot average an empty metric list");
  MetricTriple m;
  for (const auto& v : values) {
    m.dice += v.dice;
    m.pixel_error_pct += v.pixel_error_pct;
    m.adjusted_rand += v.adjusted_rand;
  }
  const double n = static_cast<double>(values.size());
  return {m.dice / n, m.pixel_error_pct / n, m.adjusted_rand / n};
}

struct MetricSummary {
  std::vector<MetricTriple> per_fold;
  MetricTriple mean;
  MetricTriple stddev;  // population std over folds
};

inline MetricSummary summarize(std::span<const MetricTriple> per_fold) {
  if (per_fold.empty()) throw ArgumentError("cannot summarize an empty fold list");
  MetricSummary s;
  s.per_fold.assign(per_fold.begin(), per_fold.end());
  s.mean = average(per_fold);
  const double n = static_cast<double>(per_fold.size());
  for (const auto& v : per_fold) {
    s.stddev.dice += (v.dice - s.mean.dice) * (v.dice - s.mean.dice);
    s.stddev.pixel_error_pct += (v.pixel_error_pct - s.mean.pixel_error_pct) * (v.pixel_error_pct - s.mean.pixel_error_pct);
    s.stddev.adjusted_rand += (v.adjusted_rand - s.mean.adjusted_rand) * (v.adjusted_rand - s.mean.adjusted_rand);
  }
  s.stddev = {std::sqrt(s.stddev.dice / n), std::sqrt(s.stddev.pixel_error_pct / n),
              std::sqrt(s.stddev.adjusted_rand / n)};
  return s;
}

inline void to_json(nlohmann::json& j, const MetricTriple& m) {
  j = nlohmann::json{{"dice", m.dice}, {"pixel_error_pct", m.pixel_error_pct}, {"adjusted_rand", m.adjusted_rand}};
}

inline void to_json(nlohmann::json& j, const MetricSummary& s) {
  j = nlohmann::json{{"folds", s.per_fold.size()},
                     {"per_fold", s.per_fold},
                     {"mean", s.mean},
                     {"std", s.stddev},
                     {"std_kind", "population over folds"},
                     {"adjusted_rand_estimator", "Hubert-Arabie (hypergeometric expectation)"}};
}

// One line of results.csv.
struct MetricRow {
  std::string run_id;
  std::string schedule_label;
  int k = 0;     // number of trainable blocks
  int fold = 0;  // 1-based; 0 when not cross-validated
  MetricTriple metrics;
};

inline constexpr const char* kMetricCsvHeader = "run_id,schedule_label,k,fold,dice,pixel_error_pct,adjusted_rand";

inline void write_metric_rows(std::ostream& out, std::span<const MetricRow> rows) {
  out << kMetricCsvHeader << '\n';
  out << std::setprecision(17);
  for (const auto& r : rows)
    out << r.run_id << ',' << r.schedule_label << ',' << r.k << ',' << r.fold << ',' << r.metrics.dice << ','
        << r.metrics.pixel_error_pct << ',' << r.metrics.adjusted_rand << '\n';
}

inline std::vector<MetricRow> read_metric_rows(std::istream& in, const std::string& source = "metrics csv") {
  std::string line;
  if (!std::getline(in, line) || line != kMetricCsvHeader) throw FormatError(source + ": unexpected header");
  std::vector<MetricRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw FormatError(source + ":" + std::to_string(lineno) + ": expected 7 columns");
    try {
      rows.push_back({cells[0], cells[1], std::stoi(cells[2]), std::stoi(cells[3]),
                      {std::stod(cells[4]), std::stod(cells[5]), std::stod(cells[6])}});
    } catch (const std::exception&) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

}  // namespace ftunet
