#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftunet/dataset.hpp"
#include "ftunet/error.hpp"
#include "ftunet/hash.hpp"
#include "ftunet/random.hpp"
#include "ftunet/sample.hpp"

namespace ftunet {

struct AugmentationConfig {
  double rotation_max = 10.0;  // degrees, symmetric
  double shift_max = 0.1;      // fraction of image extent
  double shear_max = 10.0;     // degrees
  double zoom_range = 0.1;     // zoom factor drawn from [1 - r, 1 + r]
  bool allow_horizontal_flip = true;
  std::size_t target_total = 600;
  std::uint64_t seed = 0;

  void validate(std::size_t originals, const std::string& field = "augmentation") const {
    if (rotation_max < 0) throw ConfigError(field + ".rotation_max: must be nonnegative");
    if (shift_max < 0) throw ConfigError(field + ".shift_max: must be nonnegative");
    if (shear_max < 0) throw ConfigError(field + ".shear_max: must be nonnegative");
    if (zoom_range < 0 || zoom_range >= 1) throw ConfigError(field + ".zoom_range: must lie in [0,1)");
    if (target_total < originals)
      throw ArgumentError(field + ".target_total (" + std::to_string(target_total) + ") is below the " +
                          std::to_string(originals) + " originals");
  }
};

inline void to_json(nlohmann::json& j, const AugmentationConfig& c) {
  j = nlohmann::json{{"rotation_max", c.rotation_max}, {"shift_max", c.shift_max},
                     {"shear_max", c.shear_max},       {"zoom_range", c.zoom_range},
                     {"allow_horizontal_flip", c.allow_horizontal_flip},
                     {"target_total", c.target_total}, {"seed", c.seed}};
}

inline AugmentationConfig augmentation_from_json(const nlohmann::json& j, const std::string& field = "augmentation") {
  AugmentationConfig c;
  auto read = [&](const char* key, auto& v) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(v);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field + "." + key + ": wrong type");
    }
  };
  read("rotation_max", c.rotation_max);
  read("shift_max", c.shift_max);
  read("shear_max", c.shear_max);
  read("zoom_range", c.zoom_range);
  read("allow_horizontal_flip", c.allow_horizontal_flip);
  read("target_total", c.target_total);
  read("seed", c.seed);
  return c;
}

// One random geometric transform, applied about the image centre in the
// order flip, rotate, shear, zoom, shift.
struct AffineParams {
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // fraction of width
  double shift_y = 0.0;  // fraction of height
  double shear_deg = 0.0;
  double zoom = 1.0;
  bool flip = false;

  friend bool operator==(const AffineParams&, const AffineParams&) = default;
};

inline void to_json(nlohmann::json& j, const AffineParams& p) {
  j = nlohmann::json{{"rotation_deg", p.rotation_deg}, {"shift_x", p.shift_x}, {"shift_y", p.shift_y},
                     {"shear_deg", p.shear_deg},       {"zoom", p.zoom},       {"flip", p.flip}};
}
inline void from_json(const nlohmann::json& j, AffineParams& p) {
  p.rotation_deg = j.at("rotation_deg").get<double>();
  p.shift_x = j.at("shift_x").get<double>();
  p.shift_y = j.at("shift_y").get<double>();
  p.shear_deg = j.at("shear_deg").get<double>();
  p.zoom = j.at("zoom").get<double>();
  p.flip = j.at("flip").get<bool>();
}

inline AffineParams sample_transform(const AugmentationConfig& c, Rng& rng) {
  AffineParams p;
  p.rotation_deg = rng.uniform(-c.rotation_max, c.rotation_max);
  p.shift_x = rng.uniform(-c.shift_max, c.shift_max);
  p.shift_y = rng.uniform(-c.shift_max, c.shift_max);
  p.shear_deg = rng.uniform(-c.shear_max, c.shear_max);
  p.zoom = rng.uniform(1.0 - c.zoom_range, 1.0 + c.zoom_range);
  const bool flip = rng.bernoulli(0.5);
  p.flip = c.allow_horizontal_flip && flip;
  return p;
}

namespace detail {

// Output-to-input mapping: src = centre + M * (dst - centre - shift).
struct InverseAffine {
  std::array<double, 4> m;
  double cx, cy, tx, ty;
};

inline InverseAffine inverse_affine(const AffineParams& p, int height, int width) {
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double sh = std::tan(p.shear_deg * std::numbers::pi / 180.0);
  const double f = p.flip ? -1.0 : 1.0;
  // forward A = zoom * Shear * Rot * Flip
  const double r00 = std::cos(th), r01 = -std::sin(th), r10 = std::sin(th), r11 = std::cos(th);
  const double s00 = r00 + sh * r10, s01 = r01 + sh * r11, s10 = r10, s11 = r11;
  const double a00 = p.zoom * s00 * f, a01 = p.zoom * s01, a10 = p.zoom * s10 * f, a11 = p.zoom * s11;
  const double det = a00 * a11 - a01 * a10;
  return {{a11 / det, -a01 / det, -a10 / det, a00 / det},
          (width - 1) / 2.0,
          (height - 1) / 2.0,
          p.shift_x * width,
          p.shift_y * height};
}

}  // namespace detail

// Bilinear warp with zero fill outside the source.
inline ImageTensor warp(const ImageTensor& src, const AffineParams& p) {
  const int h = src.height(), w = src.width();
  const auto inv = detail::inverse_affine(p, h, w);
  ImageTensor out(src.shape);
  auto sample = [&](int y, int x, int c) -> double {
    return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : static_cast<double>(src.at(y, x, c));
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = x - inv.cx - inv.tx, dy = y - inv.cy - inv.ty;
      const double sx = inv.cx + inv.m[0] * dx + inv.m[1] * dy;
      const double sy = inv.cy + inv.m[2] * dx + inv.m[3] * dy;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < src.channels(); ++c) {
        const double v = (1 - fy) * ((1 - fx) * sample(y0, x0, c) + fx * sample(y0, x0 + 1, c)) +
                         fy * ((1 - fx) * sample(y0 + 1, x0, c) + fx * sample(y0 + 1, x0 + 1, c));
        out.at(y, x, c) = static_cast<float>(v);
      }
    }
  return out;
}

inline ImageTensor warp_mask(const ImageTensor& mask, const AffineParams& p) {
  ImageTensor out = warp(mask, p);
  for (auto& v : out.values) v = v > 0.5f ? 1.0f : 0.0f;
  return out;
}

struct AugmentationRecord {
  std::string id;
  std::string origin_id;
  std::size_t origin_index = 0;
  std::size_t replica = 0;
  AffineParams transform;
};

struct AugmentedSet {
  SampleSet samples;  // originals first, then replicas in allocation order
  std::vector<AugmentationRecord> records;
  AugmentationConfig config;
};

// Per-sample RNG stream keyed by (seed, origin index, replica index).
inline AffineParams transform_for(const AugmentationConfig& cfg, std::size_t origin_index, std::size_t replica) {
  Rng rng(derive_seed({cfg.seed, hash_string("augment"), origin_index, replica}));
  return sample_transform(cfg, rng);
}

// Grows `originals` to cfg.target_total by distributing the extra replicas
// round-robin over the originals. Image and mask of a pair share one warp.
inline AugmentedSet augment_dataset(const SampleSet& originals, const AugmentationConfig& cfg) {
  cfg.validate(originals.size());
  for (const auto& s : originals)
    if (!s.is_original()) throw ArgumentError("augment_dataset expects originals only; got " + s.id);
  AugmentedSet out;
  out.config = cfg;
  out.samples = originals;
  if (originals.empty()) return out;
  const std::size_t extra = cfg.target_total - originals.size();
  out.samples.reserve(cfg.target_total);
  for (std::size_t r = 0; r < extra; ++r) {
    const std::size_t oi = r % originals.size();
    const std::size_t replica = r / originals.size();
    const Sample& o = originals[oi];
    AugmentationRecord rec{o.id + "_aug" + std::to_string(replica), o.id, oi, replica, transform_for(cfg, oi, replica)};
    out.samples.push_back({rec.id, o.id, warp(o.image, rec.transform), warp_mask(o.mask, rec.transform)});
    out.records.push_back(std::move(rec));
  }
  return out;
}

inline nlohmann::json provenance_json(const AugmentedSet& set) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : set.records)
    recs.push_back({{"id", r.id}, {"origin_id", r.origin_id}, {"origin_index", r.origin_index},
                    {"replica", r.replica}, {"transform", r.transform}});
  return {{"seed", set.config.seed},
          {"config", set.config},
          {"interpolation", {{"image", "bilinear, zero fill"}, {"mask", "bilinear, zero fill, then > 0.5"}}},
          {"originals", set.samples.size() - set.records.size()},
          {"records", recs}};
}

// Writes the augmented set as a dataset directory plus provenance.json.
inline DatasetManifest materialize(const AugmentedSet& set, const std::filesystem::path& dir,
                                   Modality modality = Modality::synthetic) {
  auto m = write_sample_set(set.samples, dir, modality);
  std::ofstream(dir / "provenance.json") << provenance_json(set).dump(2) << '\n';
  return m;
}

}  // namespace ftunet
