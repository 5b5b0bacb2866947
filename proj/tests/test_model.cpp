#include <gtest/gtest.h>

#include "support.hpp"
#include "volcnn/checkpoint.hpp"
#include "volcnn/model.hpp"

using namespace volcnn;
using volcnn::test::random_tensor;
using volcnn::test::TempDir;

namespace {

std::size_t spatial_of(const std::vector<LayerShape>& layers, const std::string& name) {
  for (const auto& l : layers) {
    if (l.name == name) return l.shape.back();
  }
  ADD_FAILURE() << "no layer " << name;
  return 0;
}

const LayerShape* find_layer(const std::vector<LayerShape>& layers, const std::string& name) {
  for (const auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

ModelConfig small(AgeMode age = AgeMode::kNone, NormKind norm = NormKind::kInstance) {
  ModelConfig c;
  c.crop_extent = 32;
  c.age_mode = age;
  c.norm = norm;
  c.d_model = 16;
  return c;
}

}  // namespace

TEST(Shapes, BackboneProgressionAtCrop96) {
  const std::vector<std::pair<std::string, std::size_t>> expected = {
      {"block1.conv", 96}, {"block1.pool", 47}, {"block2.conv", 43}, {"block2.pool", 21},
      {"block3.conv", 17}, {"block3.pool", 8},  {"block4.conv", 6},  {"block4.pool", 1}};
  for (int f : {1, 2, 4, 8}) {
    ModelConfig c;
    c.widening_factor = f;
    const auto layers = infer_shapes(c, 2);
    for (const auto& [name, extent] : expected) EXPECT_EQ(spatial_of(layers, name), extent) << name << " f=" << f;
    EXPECT_EQ(find_layer(layers, "block1.conv")->shape, (Shape{2, 4u * f, 96, 96, 96}));
    EXPECT_EQ(find_layer(layers, "block4.conv")->shape[1], 64u * f);
    EXPECT_EQ(find_layer(layers, "flatten")->shape, (Shape{2, 64u * f}));
    EXPECT_EQ(find_layer(layers, "fc1")->shape, (Shape{2, 1024}));
    EXPECT_EQ(find_layer(layers, "fc2")->shape, (Shape{2, 3}));
  }
}

TEST(Shapes, FirstLayerVariantsAtCrop96) {
  ModelConfig c;
  c.first_layer = FirstLayer::kK3S2;
  EXPECT_EQ(spatial_of(infer_shapes(c), "block1.conv"), 47u);
  c.first_layer = FirstLayer::kK7S4;
  EXPECT_EQ(spatial_of(infer_shapes(c), "block1.conv"), 24u);
}

TEST(Shapes, ExtraBlocksKeepTheMapBeforeFinalPool) {
  ModelConfig c;
  c.extra_blocks = 2;
  const auto arch = plan_architecture(c);
  ASSERT_EQ(arch.stages.size(), 6u);
  EXPECT_EQ(arch.stages[4].name, "extra1");
  EXPECT_EQ(spatial_of(arch.layers, "extra2.conv"), 6u);
  EXPECT_EQ(arch.stages[5].pool_name, "block4.pool");
  EXPECT_EQ(spatial_of(arch.layers, "block4.pool"), 1u);
}

TEST(Shapes, SmallCropsAdaptEveryVariant) {
  for (auto first : {FirstLayer::kK1S1, FirstLayer::kK3S2, FirstLayer::kK7S4}) {
    for (int extra : {0, 2}) {
      ModelConfig c = small();
      c.first_layer = first;
      c.extra_blocks = extra;
      const auto arch = plan_architecture(c);
      for (const auto& l : arch.layers) {
        if (l.name.ends_with(".norm")) EXPECT_GE(l.shape.back(), 2u) << l.name;
      }
      EXPECT_GE(arch.conv_features, 64u);
    }
  }
}

TEST(Shapes, StrictModeNamesTheFailingLayer) {
  ModelConfig c = small();
  c.adapt_small_inputs = false;
  try {
    plan_architecture(c);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("block3.pool"), std::string::npos) << e.what();
  }
  c.crop_extent = 96;
  EXPECT_NO_THROW(plan_architecture(c));
}

TEST(Shapes, ConcatAddsOneFeature) {
  ModelConfig c;
  c.age_mode = AgeMode::kConcatBaseline;
  const auto arch = plan_architecture(c);
  EXPECT_EQ(arch.fc1_in, arch.conv_features + 1);
}

TEST(Config, ValidateAndTextRoundTrip) {
  ModelConfig c;
  c.widening_factor = 3;
  c.norm = NormKind::kBatch;
  c.first_layer = FirstLayer::kK7S4;
  c.extra_blocks = 1;
  c.age_mode = AgeMode::kEncoded;
  c.crop_extent = 40;
  EXPECT_EQ(model_config_from_text(model_config_to_text(c)), c);
  for (void (*bad)(ModelConfig&) : {+[](ModelConfig& m) { m.widening_factor = 0; }, +[](ModelConfig& m) { m.extra_blocks = -1; },
                   +[](ModelConfig& m) { m.d_model = 7; }, +[](ModelConfig& m) { m.norm = NormKind::kLayer; },
                   +[](ModelConfig& m) { m.num_classes = 1; }}) {
    ModelConfig m;
    bad(m);
    EXPECT_THROW(m.validate(), ConfigError);
  }
  EXPECT_EQ(parse_norm_kind("bn"), NormKind::kBatch);
  EXPECT_EQ(parse_first_layer("K3S2"), FirstLayer::kK3S2);
  EXPECT_THROW(parse_age_mode("sometimes"), ConfigError);
}

TEST(Network, BuildInitializesParameters) {
  Rng rng(1);
  auto net = build<float>(small(AgeMode::kEncoded, NormKind::kBatch), rng);
  EXPECT_EQ(net.param("fc1.weight").shape(), (Shape{1024, net.architecture().fc1_in}));
  EXPECT_EQ(net.param("age.fc1.weight").shape(), (Shape{512, 16}));
  EXPECT_EQ(net.param("age.fc2.weight").shape(), (Shape{1024, 512}));
  EXPECT_EQ(net.param("fc2.weight").shape(), (Shape{3, 1024}));
  for (float v : net.param("block2.norm.gamma").data()) EXPECT_EQ(v, 1.f);
  for (float v : net.param("block2.conv.bias").data()) EXPECT_EQ(v, 0.f);
  EXPECT_EQ(net.buffers().count("block1.norm.running_var"), 1u);
  Rng rng2(1);
  auto again = build<float>(small(AgeMode::kEncoded, NormKind::kBatch), rng2);
  EXPECT_EQ(again.params(), net.params());
}

TEST(Network, ForwardShapesMatchInference) {
  for (auto age : {AgeMode::kNone, AgeMode::kEncoded, AgeMode::kConcatBaseline}) {
    Rng rng(2);
    const ModelConfig c = small(age);
    auto net = build<float>(c, rng);
    auto x = random_tensor<float>({2, 1, 32, 32, 32}, rng);
    std::vector<double> ages{70, 80};
    auto r = forward(net, x, ages);
    EXPECT_EQ(r.logits.shape(), (Shape{2, 3}));
    EXPECT_EQ(r.tape.observed, infer_shapes(c, 2));
  }
}

TEST(Network, ForwardRejectsBadInputs) {
  Rng rng(3);
  auto net = build<float>(small(AgeMode::kEncoded), rng);
  Tensor<float> x({1, 1, 32, 32, 32});
  EXPECT_THROW(forward(net, x), Error);  // age required
  EXPECT_THROW(forward(net, Tensor<float>({1, 1, 30, 32, 32}), std::vector<double>{70}), ShapeError);
}

TEST(Network, InstanceNormTrainEqualsEval) {
  Rng rng(4);
  auto net = build<float>(small(), rng);
  auto x = random_tensor<float>({2, 1, 32, 32, 32}, rng);
  auto a = forward(net, x).logits;
  auto b = forward_train(net, x).logits;
  EXPECT_EQ(a, b);
}

TEST(Network, BatchNormTrainUpdatesBuffers) {
  Rng rng(5);
  auto net = build<float>(small(AgeMode::kNone, NormKind::kBatch), rng);
  auto x = random_tensor<float>({3, 1, 32, 32, 32}, rng);
  const auto before = net.buffers();
  auto t = forward_train(net, x).logits;
  EXPECT_NE(net.buffers(), before);
  EXPECT_NE(forward(net, x).logits, t);
}

TEST(Network, StaleTapeIsRejected) {
  Rng rng(6);
  auto net = build<double>(small(), rng);
  auto x = random_tensor<double>({1, 1, 32, 32, 32}, rng);
  auto r = forward(net, x);
  Tensor<double> g({1, 3}, 1.0);
  EXPECT_NO_THROW(backward(net, r.tape, g));
  net.mutable_params();
  EXPECT_THROW(backward(net, r.tape, g), Error);
  auto copy = net;
  auto r2 = forward(copy, x);
  EXPECT_THROW(backward(net, r2.tape, g), Error);
}

TEST(Network, BackwardCoversEveryParameter) {
  Rng rng(7);
  auto net = build<double>(small(AgeMode::kEncoded), rng);
  auto x = random_tensor<double>({2, 1, 32, 32, 32}, rng);
  std::vector<double> ages{60, 90};
  auto r = forward(net, x, ages);
  auto g = backward(net, r.tape, Tensor<double>({2, 3}, 1.0), true);
  EXPECT_EQ(g.params.size(), net.params().size());
  for (const auto& [k, v] : net.params()) EXPECT_EQ(g.params.at(k).shape(), v.shape()) << k;
  EXPECT_EQ(g.input.shape(), x.shape());
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir("ckpt");
  Rng rng(8);
  auto net = build<float>(small(AgeMode::kEncoded, NormKind::kBatch), rng);
  ParamMap<float> vel;
  for (const auto& [k, v] : net.params()) vel.emplace(k, random_tensor<float>(v.shape(), rng));
  save_checkpoint(dir / "a.ckpt", net, vel, 0.625);
  auto ck = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(ck.net.config(), net.config());
  EXPECT_EQ(ck.net.params(), net.params());
  EXPECT_EQ(ck.net.buffers(), net.buffers());
  EXPECT_EQ(ck.velocity, vel);
  EXPECT_EQ(ck.val_loss, 0.625);
  save_checkpoint(dir / "b.ckpt", ck.net, ck.velocity, 0.625);
  EXPECT_EQ(test::read_file(dir / "a.ckpt"), test::read_file(dir / "b.ckpt"));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
}

TEST(Checkpoint, FixedHeaderLayout) {
  TempDir dir("ckpt");
  Rng rng(9);
  auto net = build<float>(small(), rng);
  save_checkpoint(dir / "a.ckpt", net);
  const std::string bytes = test::read_file(dir / "a.ckpt");
  EXPECT_EQ(bytes.substr(0, 8), "VCNNCKPT");
  EXPECT_EQ(bytes.substr(8, 4), std::string("\x01\x00\x00\x00", 4));
  const std::string text = model_config_to_text(net.config());
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[12 + i]);
  EXPECT_EQ(len, text.size());
  EXPECT_EQ(bytes.substr(20, len), text);
}

TEST(Checkpoint, RejectsMismatchAndDamage) {
  TempDir dir("ckpt");
  Rng rng(10);
  ModelConfig f2 = small();
  f2.widening_factor = 2;
  auto net = build<float>(f2, rng);
  save_checkpoint(dir / "a.ckpt", net);
  ModelConfig f4 = f2;
  f4.widening_factor = 4;
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt", &f4), ConfigError);
  EXPECT_NO_THROW(load_checkpoint(dir / "a.ckpt", &f2));

  const std::string bytes = test::read_file(dir / "a.ckpt");
  test::write_file(dir / "short.ckpt", bytes.substr(0, bytes.size() - 10));
  try {
    load_checkpoint(dir / "short.ckpt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kTruncated);
  }
  std::string bad = bytes;
  bad[0] = 'X';
  test::write_file(dir / "magic.ckpt", bad);
  try {
    load_checkpoint(dir / "magic.ckpt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kBadMagic);
  }
  test::write_file(dir / "trail.ckpt", bytes + "x");
  EXPECT_THROW(load_checkpoint(dir / "trail.ckpt"), DataError);
  try {
    load_checkpoint(dir / "missing.ckpt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kIo);
  }
}
