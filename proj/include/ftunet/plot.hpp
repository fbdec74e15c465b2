#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ftunet/error.hpp"
#include "ftunet/experiment.hpp"
#include "ftunet/image_io.hpp"
#include "ftunet/metrics.hpp"

namespace ftunet {

struct CurvePoint {
  int k = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

struct SweepCurve {
  std::string label;
  std::vector<CurvePoint> points;
  int block_count = 0;
};

inline SweepCurve sweep_curve(const SweepResult& s) {
  SweepCurve c{to_string(s.direction), {}, static_cast<int>(s.experiment.schedules.size())};
  for (const auto& p : s.points) c.points.push_back({p.k, p.summary.mean.dice, p.summary.stddev.dice});
  return c;
}

// Groups results.csv rows by schedule label and summarizes Dice per k.
inline std::vector<SweepCurve> sweep_curves(const std::vector<MetricRow>& rows) {
  std::map<std::string, std::map<int, std::vector<MetricTriple>>> grouped;
  for (const auto& r : rows) grouped[r.schedule_label][r.k].push_back(r.metrics);
  std::vector<SweepCurve> out;
  for (const auto& [label, by_k] : grouped) {
    SweepCurve c{label, {}, by_k.rbegin()->first};
    for (const auto& [k, folds] : by_k) {
      const auto s = summarize(folds);
      c.points.push_back({k, s.mean.dice, s.stddev.dice});
    }
    out.push_back(std::move(c));
  }
  return out;
}

namespace detail {

inline const cv::Scalar& curve_color(std::size_t i) {
  static const cv::Scalar palette[] = {{180, 90, 20}, {30, 110, 220}, {60, 160, 40}, {150, 40, 160}, {40, 40, 40}};
  return palette[i % (sizeof palette / sizeof palette[0])];
}

inline std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

// Mean Dice against the number of trainable blocks, one error-bar curve per
// entry. Rendering uses Hershey fonts only, so output bytes depend on the
// inputs alone.
inline cv::Mat render_sweep(const std::vector<SweepCurve>& curves, const std::string& title = "Dice vs trainable blocks") {
  if (curves.empty()) throw ArgumentError("plot_sweep needs at least one result");
  const int blocks = curves.front().block_count;
  for (const auto& c : curves) {
    if (c.block_count != blocks) throw ArgumentError("sweep results have different block counts");
    if (c.points.empty()) throw ArgumentError("sweep result '" + c.label + "' has no points");
  }
  const int W = 720, H = 480, left = 70, right = 20, top = 40, bottom = 60;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar::all(255));
  double lo = 1.0, hi = 0.0;
  for (const auto& c : curves)
    for (const auto& p : c.points) {
      lo = std::min(lo, p.mean - p.stddev);
      hi = std::max(hi, p.mean + p.stddev);
    }
  lo = std::max(0.0, std::floor(lo * 10.0 - 0.5) / 10.0);
  hi = std::min(1.0, std::ceil(hi * 10.0 + 0.5) / 10.0);
  if (hi - lo < 0.1) hi = std::min(1.0, lo + 0.1), lo = hi - 0.1;
  const double x0 = 0.5, x1 = blocks + 0.5;
  auto px = [&](double k) { return static_cast<int>(std::lround(left + (k - x0) / (x1 - x0) * (W - left - right))); };
  auto py = [&](double v) { return static_cast<int>(std::lround(H - bottom - (v - lo) / (hi - lo) * (H - top - bottom))); };

  const cv::Scalar axis(0, 0, 0), grid(225, 225, 225);
  const int font = cv::FONT_HERSHEY_SIMPLEX;
  for (int t = 0; t <= 10; ++t) {
    const double v = lo + (hi - lo) * t / 10.0;
    cv::line(img, {left, py(v)}, {W - right, py(v)}, grid, 1);
    cv::putText(img, detail::fixed(v, 2), {8, py(v) + 4}, font, 0.4, axis, 1, cv::LINE_8);
  }
  for (int k = 1; k <= blocks; ++k) {
    cv::line(img, {px(k), H - bottom}, {px(k), H - bottom + 5}, axis, 1);
    cv::putText(img, std::to_string(k), {px(k) - 4, H - bottom + 20}, font, 0.45, axis, 1, cv::LINE_8);
  }
  cv::rectangle(img, {left, top}, {W - right, H - bottom}, axis, 1);
  cv::putText(img, "number of trainable blocks", {W / 2 - 110, H - 15}, font, 0.5, axis, 1, cv::LINE_8);
  cv::putText(img, title, {left, 25}, font, 0.55, axis, 1, cv::LINE_8);

  for (std::size_t ci = 0; ci < curves.size(); ++ci) {
    const auto& color = detail::curve_color(ci);
    auto pts = curves[ci].points;
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.k < b.k; });
    const int jitter = static_cast<int>(ci) * 4 - static_cast<int>(curves.size() - 1) * 2;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const int x = px(pts[i].k) + jitter;
      const int ya = py(pts[i].mean - pts[i].stddev), yb = py(pts[i].mean + pts[i].stddev), ym = py(pts[i].mean);
      cv::line(img, {x, ya}, {x, yb}, color, 1);
      cv::line(img, {x - 4, ya}, {x + 4, ya}, color, 1);
      cv::line(img, {x - 4, yb}, {x + 4, yb}, color, 1);
      cv::circle(img, {x, ym}, 4, color, cv::FILLED, cv::LINE_8);
      if (i > 0) cv::line(img, {px(pts[i - 1].k) + jitter, py(pts[i - 1].mean)}, {x, ym}, color, 2, cv::LINE_8);
    }
    const int ly = top + 18 + static_cast<int>(ci) * 18;
    cv::line(img, {W - right - 190, ly - 4}, {W - right - 165, ly - 4}, color, 2);
    cv::putText(img, curves[ci].label, {W - right - 158, ly}, font, 0.45, axis, 1, cv::LINE_8);
  }
  return img;
}

inline void write_png(const cv::Mat& img, const std::filesystem::path& out) {
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  if (!cv::imwrite(out.string(), img)) throw Error("cannot write " + out.string());
}

inline void plot_sweep(const std::vector<SweepResult>& results, const std::filesystem::path& out) {
  std::vector<SweepCurve> curves;
  for (const auto& r : results) curves.push_back(sweep_curve(r));
  write_png(render_sweep(curves), out);
}

struct PredictionSet {
  std::string label;
  std::vector<ImageTensor> masks;
};

// One row per case: original, ground truth, then each prediction set, with a
// header row naming the columns.
inline cv::Mat render_panel(const std::vector<ImageTensor>& images, const std::vector<ImageTensor>& gt,
                            const std::vector<PredictionSet>& predictions, int cell = 128) {
  if (images.size() != gt.size()) throw ArgumentError("panel: images and ground-truth masks differ in number");
  for (const auto& p : predictions)
    if (p.masks.size() != images.size())
      throw ArgumentError("panel: prediction set '" + p.label + "' has " + std::to_string(p.masks.size()) +
                          " masks for " + std::to_string(images.size()) + " cases");
  for (const auto& m : gt)
    if (!is_binary(m)) throw ArgumentError("panel: ground-truth masks must be binary");
  for (const auto& p : predictions)
    for (const auto& m : p.masks)
      if (!is_binary(m)) throw ArgumentError("panel: prediction masks must be binary");
  if (images.empty()) throw ArgumentError("panel: no cases");
  const int header = 24, gap = 4;
  const int cols = 2 + static_cast<int>(predictions.size()), rows = static_cast<int>(images.size());
  cv::Mat img(header + rows * (cell + gap), cols * (cell + gap), CV_8UC3, cv::Scalar(128, 128, 128));
  std::vector<std::string> labels{"image", "ground truth"};
  for (const auto& p : predictions) labels.push_back(p.label);
  for (int c = 0; c < cols; ++c)
    cv::putText(img, labels[c], {c * (cell + gap) + 4, 16}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar::all(255), 1,
                cv::LINE_8);
  auto place = [&](const ImageTensor& t, int r, int c) {
    cv::Mat u8, scaled, bgr;
    to_mat(t).convertTo(u8, CV_8U, 255.0);
    cv::resize(u8, scaled, cv::Size(cell, cell), 0, 0, cv::INTER_NEAREST);
    cv::cvtColor(scaled, bgr, cv::COLOR_GRAY2BGR);
    bgr.copyTo(img(cv::Rect(c * (cell + gap), header + r * (cell + gap), cell, cell)));
  };
  for (int r = 0; r < rows; ++r) {
    place(images[r], r, 0);
    place(gt[r], r, 1);
    for (std::size_t p = 0; p < predictions.size(); ++p) place(predictions[p].masks[r], r, 2 + static_cast<int>(p));
  }
  return img;
}

inline void qualitative_panel(const std::vector<ImageTensor>& images, const std::vector<ImageTensor>& gt,
                              const std::vector<PredictionSet>& predictions, const std::filesystem::path& out,
                              int cell = 128) {
  write_png(render_panel(images, gt, predictions, cell), out);
}

}  // namespace ftunet
