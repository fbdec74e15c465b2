#include <gtest/gtest.h>

#include <sstream>

#include "ftunet/metrics.hpp"
#include "ftunet/random.hpp"
#include "oracles.hpp"

using namespace ftunet;

namespace {

ImageTensor mask_from(int h, int w, std::initializer_list<float> v) {
  ImageTensor m(h, w, 1);
  m.values.assign(v);
  return m;
}

using oracle::random_mask;

}  // namespace

TEST(Confusion, Examples) {
  const auto gt = mask_from(2, 2, {1, 1, 0, 0});
  EXPECT_EQ(confusion(mask_from(2, 2, {1, 0, 1, 0}), gt), (ConfusionCounts{1, 1, 1, 1}));
  const auto same = confusion(gt, gt);
  EXPECT_EQ(same.fp, 0u);
  EXPECT_EQ(same.fn, 0u);
  const auto inv = confusion(mask_from(2, 2, {0, 0, 1, 1}), gt);
  EXPECT_EQ(inv.tp, 0u);
  EXPECT_EQ(inv.tn, 0u);
}

TEST(Confusion, RejectsBadInputs) {
  EXPECT_THROW(confusion(ImageTensor(2, 2, 1), ImageTensor(2, 3, 1)), ArgumentError);
  EXPECT_THROW(confusion(mask_from(1, 2, {0.5f, 0}), mask_from(1, 2, {0, 0})), ArgumentError);
}

TEST(Dice, Examples) {
  EXPECT_DOUBLE_EQ(dice(ConfusionCounts{1, 1, 1, 1}), 0.5);
  EXPECT_DOUBLE_EQ(dice(ConfusionCounts{10, 0, 0, 6}), 1.0);
  EXPECT_DOUBLE_EQ(dice(ConfusionCounts{0, 3, 5, 8}), 0.0);
  EXPECT_DOUBLE_EQ(dice(ConfusionCounts{0, 0, 0, 16}), 1.0);
}

TEST(PixelError, Examples) {
  EXPECT_DOUBLE_EQ(pixel_error(ConfusionCounts{5, 0, 0, 11}), 0.0);
  EXPECT_DOUBLE_EQ(pixel_error(ConfusionCounts{0, 7, 9, 0}), 100.0);
  EXPECT_NEAR(pixel_error(ConfusionCounts{1000, 450, 467, 65536 - 1917}), 100.0 * 917 / 65536, 1e-12);
  EXPECT_NEAR(100.0 * 917 / 65536, 1.3992, 1e-4);
}

TEST(AdjustedRand, Examples) {
  const auto gt = mask_from(2, 2, {1, 1, 0, 0});
  EXPECT_DOUBLE_EQ(adjusted_rand(gt, gt), 1.0);
  EXPECT_DOUBLE_EQ(adjusted_rand(mask_from(2, 2, {0, 0, 1, 1}), gt), 1.0);
  const auto pred = mask_from(2, 2, {1, 0, 1, 0});
  EXPECT_DOUBLE_EQ(oracle::pair_enumeration_ari(pred, gt), -0.5);
  EXPECT_NEAR(adjusted_rand(pred, gt), oracle::pair_enumeration_ari(pred, gt), 1e-12);
}

TEST(AdjustedRand, DegenerateCases) {
  const auto zeros = ImageTensor(4, 4, 1);
  const auto ones = ImageTensor(4, 4, 1, 1.0f);
  EXPECT_DOUBLE_EQ(adjusted_rand(zeros, zeros), 1.0);
  EXPECT_DOUBLE_EQ(adjusted_rand(ones, zeros), 1.0);
  auto one_pixel = zeros;
  one_pixel.values[3] = 1;
  EXPECT_DOUBLE_EQ(adjusted_rand(one_pixel, zeros), 0.0);
  EXPECT_THROW(adjusted_rand(zeros, ImageTensor(4, 2, 1)), ArgumentError);
}

TEST(Metrics, DiceAndPixelErrorMatchPerPixelOracle) {
  Rng r(2024);
  for (int t = 0; t < 1000; ++t) {
    const auto a = random_mask(16, r, r.uniform());
    const auto b = random_mask(16, r, r.uniform());
    const auto c = confusion(a, b);
    const auto o = oracle::per_pixel(a, b);
    ASSERT_NEAR(dice(c), o.dice, 1e-12);
    ASSERT_NEAR(pixel_error(c), o.pixel_error, 1e-12);
  }
}

TEST(Metrics, AdjustedRandMatchesPairEnumeration) {
  Rng r(7);
  for (int t = 0; t < 200; ++t) {
    const auto a = random_mask(8, r, r.uniform());
    const auto b = random_mask(8, r, r.uniform());
    ASSERT_NEAR(adjusted_rand(a, b), oracle::pair_enumeration_ari(a, b), 1e-9);
  }
}

TEST(Metrics, Symmetry) {
  Rng r(8);
  for (int t = 0; t < 100; ++t) {
    const auto a = random_mask(12, r, 0.3), b = random_mask(12, r, 0.6);
    EXPECT_DOUBLE_EQ(adjusted_rand(a, b), adjusted_rand(b, a));
    EXPECT_DOUBLE_EQ(dice(confusion(a, b)), dice(confusion(b, a)));
  }
}

TEST(Metrics, AdjustedRandNearZeroForIndependentMasks) {
  Rng r(9);
  double mean = 0;
  for (int t = 0; t < 100; ++t) mean += adjusted_rand(random_mask(64, r), random_mask(64, r));
  EXPECT_LT(std::abs(mean / 100), 0.02);
}

TEST(Metrics, FixingAPixelNeverLowersDice) {
  Rng r(10);
  for (int t = 0; t < 50; ++t) {
    const auto gt = random_mask(10, r, 0.4);
    auto pred = random_mask(10, r, 0.4);
    double prev = dice(confusion(pred, gt));
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred.values[i] == gt.values[i]) continue;
      pred.values[i] = gt.values[i];
      const double now = dice(confusion(pred, gt));
      ASSERT_GE(now, prev);
      prev = now;
    }
    EXPECT_DOUBLE_EQ(prev, 1.0);
  }
}

TEST(Summarize, Examples) {
  std::vector<MetricTriple> same(5, {0.8, 1.4, 0.78});
  const auto s = summarize(same);
  EXPECT_DOUBLE_EQ(s.mean.dice, 0.8);
  EXPECT_NEAR(s.stddev.dice, 0.0, 1e-15);
  std::vector<MetricTriple> spread;
  for (double d : {0.78, 0.79, 0.80, 0.81, 0.82}) spread.push_back({d, 0, 0});
  const auto t = summarize(spread);
  EXPECT_NEAR(t.mean.dice, 0.80, 1e-12);
  EXPECT_NEAR(t.stddev.dice, std::sqrt(0.0002), 1e-12);  // population std
  EXPECT_EQ(t.per_fold.size(), 5u);
  const std::vector<MetricTriple> one{{0.5, 2.0, 0.4}};
  EXPECT_EQ(summarize(one).mean, one[0]);
  EXPECT_THROW(summarize(std::vector<MetricTriple>{}), ArgumentError);
}

TEST(MetricCsv, RoundTrip) {
  std::vector<MetricRow> rows{{"abc", "shallow_to_deep", 3, 2, {0.912345678901234, 1.25, 0.875}},
                              {"abc", "contracting_tuned", 5, 1, {0.5, 50, -0.25}}};
  std::stringstream ss;
  write_metric_rows(ss, rows);
  const auto back = read_metric_rows(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].schedule_label, "shallow_to_deep");
  EXPECT_EQ(back[0].metrics, rows[0].metrics);
  std::stringstream bad("wrong,header\n");
  EXPECT_THROW(read_metric_rows(bad), FormatError);
}
