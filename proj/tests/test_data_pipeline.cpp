#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ftunet/augment.hpp"
#include "ftunet/dataset.hpp"
#include "ftunet/folds.hpp"
#include "ftunet/image_io.hpp"

using namespace ftunet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("ftunet_dp_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Sample disc_sample(const std::string& id, int size, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor img(size, size, 1), mask(size, size, 1);
  const double cx = rng.uniform(size * 0.3, size * 0.7), cy = rng.uniform(size * 0.3, size * 0.7);
  const double r = rng.uniform(size * 0.1, size * 0.25);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool in = (x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r;
      mask.at(y, x) = in ? 1.0f : 0.0f;
      img.at(y, x) = static_cast<float>(in ? 0.8 : 0.2 + 0.1 * rng.uniform());
    }
  return {id, id, img, mask};
}

SampleSet disc_set(std::size_t n, int size = 16) {
  SampleSet s;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "s%03zu", i);
    s.push_back(disc_sample(id, size, 1000 + i));
  }
  return s;
}

void write_pairs(const fs::path& dir, std::size_t n, bool skip_last_mask = false) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "case%03zu", i);
    cv::Mat img(12, 10, CV_8UC1, cv::Scalar(static_cast<int>(i % 256)));
    cv::Mat mask = cv::Mat::zeros(12, 10, CV_8UC1);
    mask(cv::Rect(2, 2, 4, 4)) = 255;
    cv::imwrite((dir / "images" / (std::string(id) + ".png")).string(), img);
    if (!(skip_last_mask && i + 1 == n)) cv::imwrite((dir / "masks" / (std::string(id) + ".png")).string(), mask);
  }
}

}  // namespace

TEST(Preprocess, ColorImageCollapsesToUnitGray) {
  cv::Mat raw(480, 640, CV_8UC3);
  cv::randu(raw, cv::Scalar::all(0), cv::Scalar::all(256));
  const auto t = preprocess_image(raw);
  EXPECT_EQ(t.shape, (Shape3{256, 256, 1}));
  for (float v : t.values) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Preprocess, LumaWeightsAppliedBeforeResize) {
  // BGR order: pure red pixel has luma 0.299.
  cv::Mat raw(8, 8, CV_8UC3, cv::Scalar(0, 0, 255));
  const auto t = preprocess_image(raw, 8, 8);
  for (float v : t.values) EXPECT_NEAR(v, 0.299, 1e-6);
}

TEST(Preprocess, GrayscaleIdentityGeometryDividesBy255) {
  cv::Mat raw(256, 256, CV_8UC1);
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x) raw.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>((x + 3 * y) % 256);
  raw.at<std::uint8_t>(0, 0) = 255;
  const auto t = preprocess_image(raw);
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x) ASSERT_FLOAT_EQ(t.at(y, x), raw.at<std::uint8_t>(y, x) / 255.0f);
}

TEST(Preprocess, ConstantWhiteGivesOnes) {
  cv::Mat raw(100, 70, CV_8UC3, cv::Scalar::all(255));
  const auto t = preprocess_image(raw);
  for (float v : t.values) ASSERT_FLOAT_EQ(v, 1.0f);
  cv::Mat raw16(40, 40, CV_16UC1, cv::Scalar(65535));
  for (float v : preprocess_image(raw16).values) ASSERT_FLOAT_EQ(v, 1.0f);
}

TEST(Preprocess, MaskThresholdAtHalf) {
  cv::Mat raw(1, 4, CV_32FC1);
  raw.at<float>(0, 0) = 0.0f;
  raw.at<float>(0, 1) = 0.4f;
  raw.at<float>(0, 2) = 0.6f;
  raw.at<float>(0, 3) = 1.0f;
  const auto t = preprocess_mask(raw, 1, 4);
  EXPECT_EQ(t.values, (std::vector<float>{0, 0, 1, 1}));
}

TEST(Preprocess, BinaryMaskResizedStaysBinary) {
  cv::Mat raw = cv::Mat::zeros(512, 512, CV_8UC1);
  cv::circle(raw, {250, 260}, 100, cv::Scalar(255), -1, cv::LINE_AA);
  const auto t = preprocess_mask(raw);
  EXPECT_EQ(t.shape, (Shape3{256, 256, 1}));
  EXPECT_TRUE(is_binary(t));
  EXPECT_GT(std::count(t.values.begin(), t.values.end(), 1.0f), 0);
  EXPECT_TRUE(is_binary(preprocess_mask(cv::Mat::zeros(300, 200, CV_8UC1))));
  const auto z = preprocess_mask(cv::Mat::zeros(300, 200, CV_8UC1));
  EXPECT_EQ(std::count(z.values.begin(), z.values.end(), 0.0f), static_cast<long>(z.size()));
}

TEST(Preprocess, UndecodableFileIsFormatError) {
  TempDir tmp("bad");
  std::ofstream(tmp.path / "x.png") << "not an image";
  EXPECT_THROW(read_raw_image(tmp.path / "x.png"), FormatError);
  EXPECT_THROW(read_raw_image(tmp.path / "missing.png"), IngestionError);
  EXPECT_THROW(preprocess_image(cv::Mat()), FormatError);
}

TEST(Manifest, DirectoryWith163Pairs) {
  TempDir tmp("dir163");
  write_pairs(tmp.path, 163);
  const auto m = load_manifest(tmp.path, Modality::ultrasound);
  ASSERT_EQ(m.records.size(), 163u);
  EXPECT_EQ(m.original_count(), 163u);
  EXPECT_TRUE(std::is_sorted(m.records.begin(), m.records.end(),
                             [](const auto& a, const auto& b) { return a.id < b.id; }));
  const auto samples = load_samples(m, 16, 16);
  for (const auto& s : samples) {
    EXPECT_EQ(s.image.shape, (Shape3{16, 16, 1}));
    EXPECT_TRUE(is_binary(s.mask));
  }
}

TEST(Manifest, EmptyDirectoryIsEmptyManifest) {
  TempDir tmp("empty");
  const auto m = load_manifest(tmp.path);
  EXPECT_TRUE(m.records.empty());
}

TEST(Manifest, MissingMaskNamesTheRecord) {
  TempDir tmp("missing");
  write_pairs(tmp.path, 5, true);
  try {
    load_manifest(tmp.path);
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("case004"), std::string::npos) << e.what();
  }
}

TEST(Manifest, CsvWithRelativePathsAndSizeMismatch) {
  TempDir tmp("csv");
  write_pairs(tmp.path / "d", 3);
  {
    std::ofstream csv(tmp.path / "m.csv");
    csv << "id,image_path,mask_path\n";
    csv << "b,d/images/case001.png,d/masks/case001.png\n";
    csv << "a,d/images/case000.png,d/masks/case000.png\n";
  }
  const auto m = load_manifest(tmp.path / "m.csv");
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_EQ(m.records[0].id, "a");
  EXPECT_EQ(m.records[0].origin_id, "a");

  cv::imwrite((tmp.path / "big.png").string(), cv::Mat::zeros(20, 20, CV_8UC1));
  {
    std::ofstream csv(tmp.path / "bad.csv");
    csv << "id,image_path,mask_path\n";
    csv << "odd,d/images/case000.png,big.png\n";
  }
  try {
    load_manifest(tmp.path / "bad.csv");
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("odd"), std::string::npos);
  }
}

TEST(Manifest, DuplicateIdsRejected) {
  TempDir tmp("dup");
  write_pairs(tmp.path / "d", 1);
  std::ofstream(tmp.path / "m.csv") << "id,image_path,mask_path\n"
                                    << "a,d/images/case000.png,d/masks/case000.png\n"
                                    << "a,d/images/case000.png,d/masks/case000.png\n";
  EXPECT_THROW(load_manifest(tmp.path / "m.csv"), IngestionError);
}

TEST(Augment, GrowsToTargetKeepingOriginals) {
  for (std::size_t n : {163u, 240u}) {
    const auto originals = disc_set(n, 12);
    AugmentationConfig cfg;
    cfg.seed = 7;
    const auto out = augment_dataset(originals, cfg);
    ASSERT_EQ(out.samples.size(), 600u);
    EXPECT_EQ(out.records.size(), 600u - n);
    std::set<std::string> ids;
    for (const auto& s : out.samples) ids.insert(s.id);
    EXPECT_EQ(ids.size(), 600u);
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_EQ(out.samples[i].id, originals[i].id);
      ASSERT_EQ(out.samples[i].image, originals[i].image);
    }
    for (const auto& s : out.samples) ASSERT_TRUE(is_binary(s.mask)) << s.id;
  }
}

TEST(Augment, ReplicasAreRoundRobin) {
  const auto originals = disc_set(163, 8);
  const auto out = augment_dataset(originals, {.target_total = 600});
  std::map<std::string, int> per_origin;
  for (const auto& r : out.records) ++per_origin[r.origin_id];
  int lo = 1 << 30, hi = 0;
  for (const auto& [id, c] : per_origin) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  EXPECT_EQ(per_origin.size(), 163u);
  EXPECT_LE(hi - lo, 1);
}

TEST(Augment, TargetEqualToOriginalsIsIdentity) {
  const auto originals = disc_set(10);
  const auto out = augment_dataset(originals, {.target_total = 10});
  ASSERT_EQ(out.samples.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(out.samples[i].id, originals[i].id);
    EXPECT_EQ(out.samples[i].image, originals[i].image);
    EXPECT_EQ(out.samples[i].mask, originals[i].mask);
  }
}

TEST(Augment, RejectsTargetBelowOriginalsAndBadRanges) {
  const auto originals = disc_set(10);
  EXPECT_THROW(augment_dataset(originals, {.target_total = 9}), ArgumentError);
  EXPECT_THROW(augment_dataset(originals, {.rotation_max = -1, .target_total = 20}), ConfigError);
}

TEST(Augment, RecordedTransformReplaysExactly) {
  const auto originals = disc_set(20, 16);
  const auto out = augment_dataset(originals, {.target_total = 57, .seed = 3});
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const auto& rec = out.records[i];
    const auto& aug = out.samples[originals.size() + i];
    const auto& src = originals[rec.origin_index];
    ASSERT_EQ(src.id, rec.origin_id);
    const auto img = warp(src.image, rec.transform);
    ASSERT_EQ(std::memcmp(img.values.data(), aug.image.values.data(), img.size() * sizeof(float)), 0);
    // Mask before rebinarization is the same warp; threshold reproduces the stored mask.
    auto soft = warp(src.mask, rec.transform);
    for (auto& v : soft.values) v = v > 0.5f ? 1.0f : 0.0f;
    ASSERT_EQ(soft, aug.mask);
    // JSON round trip of the transform loses nothing.
    const AffineParams back = nlohmann::json(rec.transform).get<AffineParams>();
    ASSERT_EQ(back, rec.transform);
  }
}

TEST(Augment, PureFunctionOfInputsAndSeed) {
  const auto originals = disc_set(15, 16);
  const AugmentationConfig cfg{.target_total = 40, .seed = 11};
  const auto a = augment_dataset(originals, cfg);
  const auto b = augment_dataset(originals, cfg);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].image, b.samples[i].image);
    EXPECT_EQ(a.samples[i].mask, b.samples[i].mask);
  }
  auto other = cfg;
  other.seed = 12;
  const auto c = augment_dataset(originals, other);
  EXPECT_NE(a.records[0].transform, c.records[0].transform);
}

TEST(Augment, PerSampleStreamIndependentOfOrder) {
  // The transform of replica r of origin i does not depend on how many
  // other samples are present.
  const AugmentationConfig cfg{.target_total = 0, .seed = 5};
  EXPECT_EQ(transform_for(cfg, 3, 1), transform_for(cfg, 3, 1));
  EXPECT_NE(transform_for(cfg, 3, 1), transform_for(cfg, 3, 2));
  EXPECT_NE(transform_for(cfg, 3, 1), transform_for(cfg, 4, 1));
}

TEST(Augment, TransformsStayWithinConfiguredRanges) {
  const AugmentationConfig cfg{.rotation_max = 5, .shift_max = 0.05, .shear_max = 3, .zoom_range = 0.2,
                               .allow_horizontal_flip = false};
  for (std::size_t i = 0; i < 500; ++i) {
    const auto p = transform_for(cfg, i, 0);
    ASSERT_LE(std::abs(p.rotation_deg), 5.0);
    ASSERT_LE(std::abs(p.shift_x), 0.05);
    ASSERT_LE(std::abs(p.shift_y), 0.05);
    ASSERT_LE(std::abs(p.shear_deg), 3.0);
    ASSERT_GE(p.zoom, 0.8);
    ASSERT_LE(p.zoom, 1.2);
    ASSERT_FALSE(p.flip);
  }
}

TEST(Warp, IdentityAndFlip) {
  const auto s = disc_sample("x", 9, 1);
  EXPECT_EQ(warp(s.image, AffineParams{}), s.image);
  AffineParams flip;
  flip.flip = true;
  const auto f = warp(s.image, flip);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) ASSERT_FLOAT_EQ(f.at(y, x), s.image.at(y, 8 - x));
}

TEST(Warp, IntegerShiftMovesPixelsAndZeroFills) {
  ImageTensor t(10, 10, 1);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) t.at(y, x) = 0.1f + 0.01f * static_cast<float>(y * 10 + x);
  AffineParams p;
  p.shift_x = 0.2;  // 2 pixels right
  const auto s = warp(t, p);
  for (int y = 0; y < 10; ++y) {
    EXPECT_FLOAT_EQ(s.at(y, 0), 0.0f);
    EXPECT_FLOAT_EQ(s.at(y, 1), 0.0f);
    for (int x = 2; x < 10; ++x) ASSERT_NEAR(s.at(y, x), t.at(y, x - 2), 1e-6);
  }
}

TEST(Warp, QuarterTurnOfSquareImage) {
  ImageTensor t(5, 5, 1);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) t.at(y, x) = static_cast<float>(y * 5 + x);
  AffineParams p;
  p.rotation_deg = 90;
  const auto r = warp(t, p);
  // Forward map rotates by +90 degrees in (x right, y down) coordinates:
  // the content at (x, y) moves to (c - (y - c), c + (x - c)).
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) ASSERT_NEAR(r.at(x, 4 - y), t.at(y, x), 1e-4) << y << "," << x;
}

TEST(Augment, MaterializeWritesManifestAndProvenance) {
  TempDir tmp("mat");
  const auto originals = disc_set(6, 16);
  const auto set = augment_dataset(originals, {.target_total = 14, .seed = 2});
  materialize(set, tmp.path / "aug");
  const auto m = load_manifest(tmp.path / "aug");
  ASSERT_EQ(m.records.size(), 14u);
  EXPECT_EQ(m.original_count(), 6u);
  std::ifstream pin(tmp.path / "aug" / "provenance.json");
  const auto prov = nlohmann::json::parse(pin);
  EXPECT_EQ(prov.at("seed").get<std::uint64_t>(), 2u);
  EXPECT_EQ(prov.at("records").size(), 8u);
  const auto loaded = load_samples(m, 16, 16);
  for (const auto& s : loaded) EXPECT_TRUE(is_binary(s.mask));
}

TEST(Folds, BalancedSizes) {
  auto sizes = make_folds(disc_set(163, 4), 5, 1).sizes();
  std::sort(sizes.rbegin(), sizes.rend());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{33, 33, 33, 32, 32}));
  EXPECT_EQ(make_folds(disc_set(240, 4), 5, 1).sizes(), (std::vector<std::size_t>(5, 48)));
}

TEST(Folds, DeterministicInSeed) {
  const auto s = disc_set(50, 4);
  EXPECT_EQ(make_folds(s, 5, 9).assignment, make_folds(s, 5, 9).assignment);
  EXPECT_NE(make_folds(s, 5, 9).assignment, make_folds(s, 5, 10).assignment);
  // Input order does not matter.
  auto rev = s;
  std::reverse(rev.begin(), rev.end());
  EXPECT_EQ(make_folds(s, 5, 9).assignment, make_folds(rev, 5, 9).assignment);
}

TEST(Folds, RejectsBadCounts) {
  const auto s = disc_set(4, 4);
  EXPECT_THROW(make_folds(s, 1, 0), ArgumentError);
  EXPECT_THROW(make_folds(s, 5, 0), ArgumentError);
  auto aug = augment_dataset(s, {.target_total = 6});
  EXPECT_THROW(make_folds(aug.samples, 2, 0), ArgumentError);
}

TEST(Folds, EachOriginalValidatesOnceAndNoLeakage) {
  const auto originals = disc_set(163, 8);
  const auto folds = make_folds(originals, 5, 4);
  const auto all = augment_dataset(originals, {.target_total = 600, .seed = 4}).samples;
  std::map<std::string, int> validated;
  for (int f = 1; f <= 5; ++f) {
    const auto train = training_split(all, folds, f);
    const auto val = validation_split(all, folds, f);
    std::set<std::string> val_ids;
    for (const auto& v : val) {
      ASSERT_TRUE(v.is_original());
      val_ids.insert(v.id);
      ++validated[v.id];
    }
    for (const auto& t : train) ASSERT_FALSE(val_ids.contains(t.origin_id)) << t.id << " leaks into fold " << f;
    const auto train_originals =
        std::count_if(train.begin(), train.end(), [](const Sample& x) { return x.is_original(); });
    EXPECT_EQ(static_cast<std::size_t>(train_originals) + val.size(), originals.size());
  }
  EXPECT_EQ(validated.size(), 163u);
  for (const auto& [id, c] : validated) EXPECT_EQ(c, 1) << id;
}
