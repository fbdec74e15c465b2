#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ftunet/train.hpp"
#include "oracles.hpp"

using namespace ftunet;

namespace {

ArchitectureSpec make_spec(int size, int depth, int base) {
  ArchitectureSpec s;
  s.input_height = s.input_width = size;
  s.depth = depth;
  s.base_filters = base;
  return s;
}

template <class T>
Tensor<T> random_image(int size, std::uint64_t seed) {
  Rng r(seed);
  Tensor<T> t(size, size, 1);
  for (auto& v : t.values) v = static_cast<T>(r.uniform());
  return t;
}

template <class T>
Tensor<T> disc_mask(int size, double cx, double cy, double radius) {
  Tensor<T> m(size, size, 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) m.at(y, x) = (x - cx) * (x - cx) + (y - cy) * (y - cy) < radius * radius ? 1 : 0;
  return m;
}

SampleSet disc_dataset(int n, int size, std::uint64_t seed) {
  SampleSet out;
  Rng r(seed);
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.id = s.origin_id = "s" + std::to_string(i);
    const double cx = r.uniform(size * 0.3, size * 0.7), cy = r.uniform(size * 0.3, size * 0.7);
    s.mask = disc_mask<float>(size, cx, cy, size * 0.2);
    s.image = ImageTensor(size, size, 1);
    for (std::size_t j = 0; j < s.mask.size(); ++j)
      s.image.values[j] = static_cast<float>(0.2 + 0.5 * s.mask.values[j] + 0.1 * r.uniform());
    out.push_back(std::move(s));
  }
  return out;
}

double gradient_agreement(int depth, int base, int size, bool training, std::uint64_t seed) {
  const auto check = oracle::finite_difference_check(depth, base, size, training, seed);
  // a check where nearly every gradient vanishes would pass trivially
  EXPECT_GT(check.informative, check.total / 2);
  return check.agreement();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ftunet_test_" + name);
}

}  // namespace

TEST(Gradients, DepthOneMatchesFiniteDifferences) {
  EXPECT_GE(gradient_agreement(1, 4, 8, false, 11), 0.95);
}

TEST(Gradients, DepthOneWithFixedDropoutMask) {
  EXPECT_GE(gradient_agreement(1, 4, 8, true, 12), 0.95);
}

TEST(Gradients, DeeperNetworkCoversPoolUpsampleConcat) {
  EXPECT_GE(gradient_agreement(3, 2, 8, true, 13), 0.95);
}

TEST(Gradients, InputGradientMatchesFiniteDifferences) {
  Network<double> net(build_unet(make_spec(8, 2, 3)));
  net.init_he_uniform(5);
  auto x = random_image<double>(8, 6);
  const int layer = net.graph().conv_layer(3);
  auto objective = [&](const Tensor<double>& in) {
    Workspace<double> ws;
    ForwardOptions o;
    o.stop_after = layer;
    net.forward(in, ws, o);
    double s = 0;
    for (double v : ws.preactivations[layer].values) s += v;
    return s;
  };
  Workspace<double> ws;
  ForwardOptions o;
  o.stop_after = layer;
  net.forward(x, ws, o);
  Tensor<double> seed(ws.preactivations[layer].shape, 1.0);
  const auto dx = net.backward(ws, layer, seed, nullptr, true);
  int good = 0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double keep = x.values[j];
    x.values[j] = keep + 1e-6;
    const double up = objective(x);
    x.values[j] = keep - 1e-6;
    const double down = objective(x);
    x.values[j] = keep;
    const double num = (up - down) / 2e-6;
    const double scale = std::max(std::abs(num), std::abs(dx.values[j]));
    good += scale < 1e-12 || std::abs(num - dx.values[j]) / scale < 1e-4;
  }
  EXPECT_GE(good, static_cast<int>(0.95 * x.size()));
}

TEST(Gradients, FrozenLayersReceiveNoGradient) {
  const auto g = build_unet(make_spec(16, 3, 4));
  const auto blocks = enumerate_blocks(g);
  const auto plan = make_cumulative_plan(SweepDirection::deep_to_shallow, 2, blocks);
  Network<float> net(apply_freeze_plan(g, plan));
  net.init_he_uniform(3);
  auto grads = net.zero_gradients();
  Workspace<float> ws;
  const auto x = random_image<float>(16, 1);
  const auto y = disc_mask<float>(16, 8, 8, 4);
  accumulate_gradients(net, x, y, grads, ws, {});
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = net.graph().layers[i];
    if (!has_parameters(l.kind)) continue;
    if (!l.trainable) {
      EXPECT_TRUE(grads[i].kernel.empty()) << l.name;
      continue;
    }
    double norm = 0;
    for (float v : grads[i].kernel) norm += std::abs(v);
    EXPECT_GT(norm, 0.0) << l.name;
  }
}

TEST(Loss, ClampBehaviour) {
  ImageTensor y(4, 4, 1);
  for (std::size_t i = 0; i < y.size(); i += 2) y.values[i] = 1;
  ImageTensor perfect = y, inverted = y;
  for (auto& v : inverted.values) v = 1 - v;
  EXPECT_LT(binary_cross_entropy(perfect, y).loss, 1e-6);
  EXPECT_NEAR(binary_cross_entropy(inverted, y).loss, -std::log(kProbabilityClamp), 1e-6);
}

TEST(Predict, RangeShapeAndPurity) {
  const auto g = build_unet(make_spec(32, 3, 4));
  Network<float> net(g);
  net.init_he_uniform(4);
  const auto ck = snapshot(net);
  const auto x = random_image<float>(32, 9);
  const auto p1 = predict(g, ck, x);
  const auto p2 = predict(g, ck, x);
  EXPECT_EQ(p1.shape, (Shape3{32, 32, 1}));
  EXPECT_EQ(p1, p2);
  for (float v : p1.values) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  EXPECT_THROW(predict(g, ck, random_image<float>(16, 1)), ArgumentError);
}

TEST(Predict, FullSizedNetworkOutputShape) {
  const auto g = build_unet(make_spec(256, 5, 64));
  Network<float> net(g);
  net.init_he_uniform(1);
  const auto p = predict(g, snapshot(net), random_image<float>(256, 2));
  EXPECT_EQ(p.shape, (Shape3{256, 256, 1}));
}

TEST(Predict, ShapePreservationProperty) {
  Rng r(77);
  for (int trial = 0; trial < 6; ++trial) {
    const int depth = 1 + static_cast<int>(r.below(4));
    const int size = (1 << (depth - 1)) * (1 + static_cast<int>(r.below(4)));
    auto spec = make_spec(size, depth, 1 + static_cast<int>(r.below(4)));
    spec.input_width = size * 2;
    const auto g = build_unet(spec);
    Network<float> net(g);
    net.init_he_uniform(trial);
    ImageTensor x(size, size * 2, 1);
    for (auto& v : x.values) v = static_cast<float>(r.uniform());
    const auto p = predict(g, snapshot(net), x);
    EXPECT_EQ(p.shape, (Shape3{size, size * 2, 1}));
    for (float v : p.values) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Binarize, StrictThreshold) {
  ImageTensor p(1, 4, 1);
  p.values = {0.7f, 0.3f, 0.5f, 0.0f};
  EXPECT_EQ(binarize(p).values, (std::vector<float>{1, 0, 0, 0}));
  ImageTensor z(3, 3, 1);
  EXPECT_EQ(binarize(z).values, std::vector<float>(9, 0.0f));
}

TEST(Pretrain, RejectsBadInputs) {
  const auto g = build_unet(make_spec(16, 2, 2));
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(pretrain(g, disc_dataset(2, 16, 1), cfg), ConfigError);
  cfg.epochs = 1;
  EXPECT_THROW(pretrain(g, {}, cfg), ArgumentError);
  EXPECT_THROW(pretrain(g, disc_dataset(2, 32, 1), cfg), StructuralError);
  const auto frozen = apply_freeze_plan(g, FreezePlan({1}, "partial"));
  EXPECT_THROW(pretrain(frozen, disc_dataset(2, 16, 1), cfg), ArgumentError);
}

TEST(Pretrain, ConstantBackgroundDrivesProbabilityDown) {
  const auto g = build_unet(make_spec(32, 2, 4));
  SampleSet data = disc_dataset(20, 32, 3);
  for (auto& s : data) s.mask.fill(0.0f);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.validation_fraction = 0.1;
  const auto ck = pretrain(g, data, cfg);
  EXPECT_EQ(ck.training_log.size(), 10u);
  ASSERT_TRUE(ck.training_log.back().validation_loss.has_value());
  Predictor pred(g, ck);
  double mean = 0;
  for (const auto& s : data) {
    const auto p = pred.predict(s.image);
    for (float v : p.values) mean += v;
  }
  mean /= static_cast<double>(data.size() * 32 * 32);
  EXPECT_LT(mean, 0.1);
}

TEST(Pretrain, DeterministicAcrossRuns) {
  const auto g = build_unet(make_spec(16, 3, 4));
  const auto data = disc_dataset(6, 16, 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.seed = 17;
  const auto a = pretrain(g, data, cfg);
  const auto b = pretrain(g, data, cfg);
  EXPECT_EQ(a.tensors, b.tensors);
  EXPECT_EQ(a.id(), b.id());
  cfg.seed = 18;
  EXPECT_NE(pretrain(g, data, cfg).id(), a.id());
}

TEST(Finetune, FrozenTensorsBitIdentical) {
  const auto g = build_unet(make_spec(32, 5, 2));
  const auto data = disc_dataset(4, 32, 5);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.learning_rate = 1e-2;
  const auto init = pretrain(g, data, cfg);
  const auto plan = FreezePlan({1, 2, 3, 4, 5}, "contracting_tuned");
  const auto tuned = finetune(g, init, plan, data, cfg);
  const auto frozen_graph = apply_freeze_plan(g, plan);
  for (const auto& l : frozen_graph.layers) {
    if (!has_parameters(l.kind)) continue;
    const auto& before = init.tensors.at(l.name + ".kernel").data;
    const auto& after = tuned.tensors.at(l.name + ".kernel").data;
    if (l.trainable)
      EXPECT_NE(before, after) << l.name;
    else
      EXPECT_EQ(0, std::memcmp(before.data(), after.data(), before.size() * sizeof(float))) << l.name;
  }
  EXPECT_EQ(tuned.provenance.at("parent"), init.id());
  EXPECT_EQ(freeze_plan_from_json(tuned.provenance.at("plan")), plan);
}

TEST(Finetune, RejectsIncompatibleCheckpoint) {
  const auto g = build_unet(make_spec(16, 2, 2));
  Network<float> other(build_unet(make_spec(16, 2, 4)));
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(finetune(g, snapshot(other), FreezePlan({1}, "x"), disc_dataset(2, 16, 1), cfg),
               IncompatibleCheckpointError);
}

TEST(Finetune, ResumeMatchesUninterruptedRun) {
  const auto g = build_unet(make_spec(16, 3, 4));
  const auto data = disc_dataset(6, 16, 8);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  const auto init = pretrain(g, data, cfg);
  const auto plan = FreezePlan({2, 3, 4}, "mid");
  const auto short_run = finetune(g, init, plan, data, cfg);
  const auto resumed = resume_training(g, short_run, data, cfg, 4);
  cfg.epochs = 4;
  const auto straight = finetune(g, init, plan, data, cfg);
  EXPECT_EQ(resumed.tensors, straight.tensors);
  EXPECT_EQ(resumed.training_log, straight.training_log);
  EXPECT_EQ(resumed.optimizer, straight.optimizer);
}

TEST(CheckpointFile, RoundTripIsBitExact) {
  const auto g = build_unet(make_spec(16, 3, 4));
  const auto data = disc_dataset(4, 16, 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.validation_fraction = 0.25;
  const auto ck = pretrain(g, data, cfg);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path, g);
  EXPECT_EQ(back.tensors, ck.tensors);
  EXPECT_EQ(back.provenance, ck.provenance);
  EXPECT_EQ(back.training_log, ck.training_log);
  EXPECT_EQ(back.optimizer, ck.optimizer);
  EXPECT_EQ(back.id(), ck.id());
  std::filesystem::remove(path);
}

TEST(CheckpointFile, PreservesFortyEpochLog) {
  Network<float> net(build_unet(make_spec(8, 1, 2)));
  auto ck = snapshot(net);
  for (int e = 1; e <= 40; ++e) ck.training_log.push_back({e, 1.0 / e, std::nullopt});
  EXPECT_EQ(decode_checkpoint(encode_checkpoint(ck)).training_log.size(), 40u);
}

TEST(CheckpointFile, DetectsCorruptionAndMismatch) {
  const auto g = build_unet(make_spec(8, 2, 2));
  Network<float> net(g);
  net.init_he_uniform(1);
  const auto bytes = encode_checkpoint(snapshot(net));
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IntegrityError);
  auto flipped = bytes;
  flipped[flipped.size() - 5] ^= 0x40;
  EXPECT_THROW(decode_checkpoint(flipped), IntegrityError);
  EXPECT_THROW(decode_checkpoint("garbage"), IntegrityError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), IntegrityError);

  const auto path = temp_path("mismatch.ckpt");
  save_checkpoint(snapshot(net), path);
  EXPECT_THROW(load_checkpoint(path, build_unet(make_spec(8, 2, 4))), IncompatibleCheckpointError);
  std::filesystem::remove(path);
}
