#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "ftunet/error.hpp"
#include "ftunet/hash.hpp"
#include "ftunet/image_io.hpp"
#include "ftunet/random.hpp"
#include "ftunet/sample.hpp"

namespace ftunet {

// Stand-ins for the natural-image and ultrasound corpora, used by the
// end-to-end tests and the sample configs.
enum class SyntheticKind { blobs, speckle };
NLOHMANN_JSON_SERIALIZE_ENUM(SyntheticKind, {{SyntheticKind::blobs, "blobs"}, {SyntheticKind::speckle, "speckle"}})

namespace detail {

// Star-shaped contour r(t) = r0 * (1 + sum a_k sin(k t + phi_k)).
struct Blob {
  double cx, cy, r0, angle, aspect;
  double amp[3], phase[3];

  static Blob random(Rng& rng, int h, int w, double rmin, double rmax) {
    Blob b;
    b.r0 = rng.uniform(rmin, rmax) * std::min(h, w);
    b.cx = rng.uniform(b.r0, w - b.r0);
    b.cy = rng.uniform(b.r0, h - b.r0);
    b.angle = rng.uniform(0.0, std::numbers::pi);
    b.aspect = rng.uniform(0.7, 1.0);
    for (int k = 0; k < 3; ++k) {
      b.amp[k] = rng.uniform(0.0, 0.15 / (k + 1));
      b.phase[k] = rng.uniform(0.0, 2 * std::numbers::pi);
    }
    return b;
  }

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = std::cos(angle) * dx + std::sin(angle) * dy;
    const double v = (-std::sin(angle) * dx + std::cos(angle) * dy) / aspect;
    const double t = std::atan2(v, u);
    double r = 1.0;
    for (int k = 0; k < 3; ++k) r += amp[k] * std::sin((k + 2) * t + phase[k]);
    return u * u + v * v < r0 * r0 * r * r;
  }
};

inline cv::Mat smooth_noise(Rng& rng, int h, int w, double sigma) {
  cv::Mat n(h, w, CV_32F);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) n.at<float>(y, x) = static_cast<float>(rng.normal());
  cv::GaussianBlur(n, n, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
  double lo, hi;
  cv::minMaxLoc(n, &lo, &hi);
  n = (n - lo) / std::max(hi - lo, 1e-9);
  return n;
}

inline std::string numbered(const std::string& prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return prefix + buf;
}

}  // namespace detail

// Natural-like: a textured salient blob over a cluttered smooth background,
// with one or two distractor blobs of weaker contrast. Mask = salient blob.
inline Sample synthetic_blob_sample(const std::string& id, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  const cv::Mat bg = detail::smooth_noise(rng, h, w, std::max(2.0, h / 12.0));
  const double bg_level = rng.uniform(0.2, 0.5);
  const bool brighter = rng.bernoulli(0.7);
  const double fg_level = brighter ? rng.uniform(bg_level + 0.3, 0.95) : rng.uniform(0.0, bg_level - 0.15);
  const auto main = detail::Blob::random(rng, h, w, 0.15, 0.3);
  const int n_distract = static_cast<int>(rng.below(3));
  std::vector<detail::Blob> distract;
  std::vector<double> distract_level;
  for (int i = 0; i < n_distract; ++i) {
    distract.push_back(detail::Blob::random(rng, h, w, 0.05, 0.1));
    distract_level.push_back(bg_level + rng.uniform(-0.12, 0.12));
  }
  ImageTensor img(h, w, 1), mask(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = bg_level + 0.25 * (bg.at<float>(y, x) - 0.5);
      for (int i = 0; i < n_distract; ++i)
        if (distract[i].contains(x, y)) v = distract_level[i];
      if (main.contains(x, y)) {
        v = fg_level + 0.08 * (bg.at<float>(h - 1 - y, w - 1 - x) - 0.5);
        mask.at(y, x) = 1.0f;
      }
      v += 0.03 * rng.normal();
      img.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return {id, id, img, mask};
}

// Ultrasound-like: fully developed speckle (Rayleigh amplitude of blurred
// complex Gaussian noise) over layered tissue echogenicity, with a
// hypoechoic lesion showing posterior acoustic enhancement.
inline Sample synthetic_speckle_sample(const std::string& id, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  cv::Mat re(h, w, CV_32F), im(h, w, CV_32F);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      re.at<float>(y, x) = static_cast<float>(rng.normal());
      im.at<float>(y, x) = static_cast<float>(rng.normal());
    }
  const double grain = std::max(0.6, h / 160.0);
  cv::GaussianBlur(re, re, cv::Size(0, 0), grain * 1.6, grain, cv::BORDER_REFLECT);
  cv::GaussianBlur(im, im, cv::Size(0, 0), grain * 1.6, grain, cv::BORDER_REFLECT);
  cv::Mat amp;
  cv::magnitude(re, im, amp);
  const double mean_amp = cv::mean(amp)[0];

  const cv::Mat tissue = detail::smooth_noise(rng, h, w, std::max(3.0, h / 8.0));
  const auto lesion = detail::Blob::random(rng, h, w, 0.12, 0.25);
  const double lesion_echo = rng.uniform(0.08, 0.2);
  const double gain = rng.uniform(0.45, 0.6);
  ImageTensor img(h, w, 1), mask(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double depth = static_cast<double>(y) / h;
      double echo = gain * (0.75 + 0.5 * tissue.at<float>(y, x)) * (1.0 - 0.35 * depth);
      if (lesion.contains(x, y)) {
        echo = lesion_echo;
        mask.at(y, x) = 1.0f;
      } else if (y > lesion.cy && std::abs(x - lesion.cx) < 0.8 * lesion.r0) {
        echo *= 1.15;  // posterior enhancement
      }
      const double v = echo * amp.at<float>(y, x) / mean_amp;
      img.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return {id, id, img, mask};
}

inline SampleSet synthetic_dataset(SyntheticKind kind, std::size_t count, int h, int w, std::uint64_t seed) {
  if (h < 8 || w < 8) throw ArgumentError("synthetic images need at least 8x8 pixels");
  SampleSet out;
  out.reserve(count);
  const char* prefix = kind == SyntheticKind::blobs ? "blob" : "us";
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = derive_seed({seed, hash_string(prefix), i});
    const auto id = detail::numbered(prefix, i);
    out.push_back(kind == SyntheticKind::blobs ? synthetic_blob_sample(id, h, w, s) : synthetic_speckle_sample(id, h, w, s));
  }
  return out;
}

}  // namespace ftunet
