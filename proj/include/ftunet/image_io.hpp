#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ftunet/error.hpp"
#include "ftunet/tensor.hpp"

namespace ftunet {

inline constexpr int kDefaultImageSize = 256;

inline cv::Mat read_raw_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IngestionError("missing file " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw FormatError("cannot decode image " + path.string());
  return m;
}

namespace detail {

// Single-channel float in [0,1]. Colour inputs collapse with Rec.601 luma
// weights (OpenCV stores BGR). Integer images scale by their type maximum,
// except label-style images whose maximum is 1.
inline cv::Mat to_unit_gray(const cv::Mat& raw, bool label_image) {
  if (raw.empty()) throw FormatError("empty image");
  const int ch = raw.channels();
  if (ch != 1 && ch != 3 && ch != 4) throw FormatError("unsupported channel count " + std::to_string(ch));
  double scale = 1.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F:
    case CV_64F: scale = 1.0; break;
    default: throw FormatError("unsupported pixel depth");
  }
  std::vector<cv::Mat> planes;
  cv::split(raw, planes);
  cv::Mat gray;
  if (ch == 1) {
    planes[0].convertTo(gray, CV_64F);
  } else {
    cv::Mat b, g, r;
    planes[0].convertTo(b, CV_64F);
    planes[1].convertTo(g, CV_64F);
    planes[2].convertTo(r, CV_64F);
    gray = 0.299 * r + 0.587 * g + 0.114 * b;
  }
  if (label_image && (raw.depth() == CV_8U || raw.depth() == CV_16U)) {
    double lo, hi;
    cv::minMaxLoc(gray, &lo, &hi);
    if (hi <= 1.0) scale = 1.0;
  }
  cv::Mat out;
  gray.convertTo(out, CV_32F, scale);
  cv::min(cv::max(out, 0.0), 1.0, out);
  return out;
}

inline ImageTensor from_mat(const cv::Mat& m) {
  CV_Assert(m.type() == CV_32F);
  ImageTensor t(m.rows, m.cols, 1);
  for (int y = 0; y < m.rows; ++y) std::copy_n(m.ptr<float>(y), m.cols, &t.at(y, 0));
  return t;
}

}  // namespace detail

inline cv::Mat to_mat(const ImageTensor& t) {
  if (t.channels() != 1) throw ArgumentError("only single-channel tensors convert to images");
  cv::Mat m(t.height(), t.width(), CV_32F);
  for (int y = 0; y < t.height(); ++y) std::copy_n(&t.at(y, 0), t.width(), m.ptr<float>(y));
  return m;
}

// Grayscale, resized to height x width, values in [0,1].
inline ImageTensor preprocess_image(const cv::Mat& raw, int height = kDefaultImageSize, int width = kDefaultImageSize) {
  cv::Mat gray = detail::to_unit_gray(raw, false);
  if (gray.rows != height || gray.cols != width) {
    const bool shrinking = gray.rows > height || gray.cols > width;
    cv::Mat resized;
    cv::resize(gray, resized, cv::Size(width, height), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
    cv::min(cv::max(resized, 0.0), 1.0, gray);
  }
  return detail::from_mat(gray);
}

// Binary {0,1} mask, nearest-neighbour resampling, re-binarized at 0.5.
inline ImageTensor preprocess_mask(const cv::Mat& raw, int height = kDefaultImageSize, int width = kDefaultImageSize) {
  cv::Mat gray = detail::to_unit_gray(raw, true);
  if (gray.rows != height || gray.cols != width) {
    cv::Mat resized;
    cv::resize(gray, resized, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
    gray = resized;
  }
  ImageTensor t = detail::from_mat(gray);
  for (auto& v : t.values) v = v > 0.5f ? 1.0f : 0.0f;
  return t;
}

// 8-bit PNG/BMP/TIFF chosen by extension; values rounded from [0,1].
inline void write_image(const ImageTensor& t, const std::filesystem::path& path) {
  cv::Mat u8;
  to_mat(t).convertTo(u8, CV_8U, 255.0);
  if (!cv::imwrite(path.string(), u8)) throw Error("cannot write image " + path.string());
}

}  // namespace ftunet
