#include <gtest/gtest.h>

#include <algorithm>

#include "support.hpp"
#include "volcnn/checkpoint.hpp"
#include "volcnn/optim.hpp"

using namespace volcnn;
using volcnn::test::random_tensor;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.crop_extent = 16;
  return c;
}

}  // namespace

TEST(Sgd, MatchesHandUnrolledMomentum) {
  ParamMap<double> p{{"a", Tensor<double>({2}, std::vector<double>{1.0, -2.0})}};
  ParamMap<double> v;
  const std::vector<std::vector<double>> gs = {{0.5, 1.0}, {-1.0, 0.25}, {2.0, 0.0}};
  const double lr = 0.1, mu = 0.9;
  // v1 = g1; p1 = p0 - lr v1; v2 = mu v1 + g2; ...
  double pa = 1.0, pb = -2.0, va = 0, vb = 0;
  for (const auto& g : gs) {
    ParamMap<double> grads{{"a", Tensor<double>({2}, g)}};
    sgd_step(p, grads, v, lr, mu);
    va = mu * va + g[0];
    vb = mu * vb + g[1];
    pa -= lr * va;
    pb -= lr * vb;
    EXPECT_DOUBLE_EQ(p.at("a")[0], pa);
    EXPECT_DOUBLE_EQ(p.at("a")[1], pb);
    EXPECT_DOUBLE_EQ(v.at("a")[0], va);
  }
  ParamMap<double> wrong{{"b", Tensor<double>({2})}};
  EXPECT_THROW(sgd_step(p, wrong, v, lr, mu), Error);
  ParamMap<double> shape{{"a", Tensor<double>({3})}};
  EXPECT_THROW(sgd_step(p, shape, v, lr, mu), ShapeError);
}

TEST(Sgd, LossDecreasesOnAFixedBatch) {
  Rng rng(1);
  ModelConfig c;
  c.crop_extent = 32;
  auto net = build<float>(c, rng);
  auto data = test::synthetic(2, 0, 32, 5);
  Tensor<float> x({6, 1, 32, 32, 32});
  std::vector<int> labels;
  for (std::size_t i = 0; i < 6; ++i) {
    auto in = eval_input(data[i], 32, {});
    std::copy(in.data().begin(), in.data().end(), x.ptr() + i * in.size());
    labels.push_back(data[i].label);
  }
  ParamMap<float> vel;
  std::vector<double> losses;
  for (int step = 0; step < 20; ++step) {
    auto r = forward_train(net, x);
    auto loss = softmax_xent(r.logits, labels);
    losses.push_back(loss.loss);
    auto g = backward(net, r.tape, loss.grad);
    sgd_step(net.mutable_params(), g.params, vel, 1e-3, 0.9);
  }
  EXPECT_LT(losses.back(), losses.front());
}

TEST(TrainConfig, BatchSizeSwitchesWithNorm) {
  TrainConfig t;
  EXPECT_EQ(t.effective_batch_size(NormKind::kInstance), 4);
  EXPECT_EQ(t.effective_batch_size(NormKind::kBatch), 16);
  t.batch_size = 7;
  EXPECT_EQ(t.effective_batch_size(NormKind::kBatch), 7);
  t.learning_rate = -1;
  EXPECT_THROW(t.validate(tiny()), ConfigError);
}

TEST(Preprocess, EvalInputIsZScoredCenterCrop) {
  auto s = test::synthetic(1, 0, 20, 2)[0];
  auto in = eval_input(s, 16, {});
  ASSERT_EQ(in.shape(), (Shape{1, 16, 16, 16}));
  auto z = intensity_normalize(s.volume);
  EXPECT_EQ(in, center_crop(z, 16).volume);
  auto a = train_input(s, 16, {}, 3, 10);
  auto b = train_input(s, 16, {}, 3, 10);
  auto c = train_input(s, 16, {}, 3, 11);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Train, CheckpointsTheMinimumValidationLoss) {
  test::TempDir dir("train");
  auto data = test::synthetic(2, 1, 16, 3);
  std::vector<VolumeSample> tr, va;
  for (auto& s : data) (s.split == Split::kTrain ? tr : va).push_back(s);
  TrainConfig t;
  t.max_epochs = 6;
  t.seed = 4;
  t.echo = false;
  t.checkpoint_path = dir / "best.ckpt";
  Rng rng(1);
  auto res = train(build<float>(tiny(), rng), tr, va, t);
  ASSERT_EQ(res.log.epochs.size(), 6u);
  double best = 1e300;
  int best_epoch = 0;
  for (const auto& e : res.log.epochs) {
    EXPECT_EQ(e.checkpointed, e.val_loss < best);
    if (e.val_loss < best) best = e.val_loss, best_epoch = e.epoch;
    EXPECT_EQ(e.seconds, 0.0);
  }
  EXPECT_EQ(res.best_val_loss, best);
  EXPECT_EQ(res.best_epoch, best_epoch);
  auto ck = load_checkpoint(t.checkpoint_path);
  EXPECT_EQ(ck.net.params(), res.best.params());
  EXPECT_FLOAT_EQ(static_cast<float>(ck.val_loss), static_cast<float>(best));
  EXPECT_NEAR(predict(res.best, va, t.preprocess).loss, best, 1e-6);
  const std::string csv = res.log.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), TrainLog::kHeader);

  Rng rng2(1);
  auto again = train(build<float>(tiny(), rng2), tr, va, t);
  EXPECT_EQ(again.log.to_csv(), csv);
  EXPECT_EQ(again.best.params(), res.best.params());
}

TEST(Train, RejectsMislabelledOrLeakingSets) {
  auto data = test::synthetic(2, 1, 16, 3);
  std::vector<VolumeSample> tr, va;
  for (auto& s : data) (s.split == Split::kTrain ? tr : va).push_back(s);
  TrainConfig t;
  t.max_epochs = 1;
  t.echo = false;
  Rng rng(1);
  auto net = build<float>(tiny(), rng);
  EXPECT_THROW(train(net, va, va, t), DataError);
  auto leak = va;
  leak[0].subject_id = tr[0].subject_id;
  try {
    train(net, tr, leak, t);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kLeakage);
  }
  EXPECT_THROW(train(net, {}, va, t), Error);
}

TEST(Train, DivergenceIsANumericError) {
  auto data = test::synthetic(2, 1, 16, 3);
  std::vector<VolumeSample> tr, va;
  for (auto& s : data) (s.split == Split::kTrain ? tr : va).push_back(s);
  TrainConfig t;
  t.max_epochs = 3;
  t.learning_rate = 1e30;
  t.echo = false;
  Rng rng(1);
  EXPECT_THROW(train(build<float>(tiny(), rng), tr, va, t), NumericError);
}

TEST(Predict, ProbabilitiesSumToOne) {
  auto data = test::synthetic(2, 0, 16, 3);
  Rng rng(1);
  auto net = build<float>(tiny(), rng);
  auto p = predict(net, data, {}, 4);
  ASSERT_EQ(p.probs.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_NEAR(p.probs[i][0] + p.probs[i][1] + p.probs[i][2], 1.0, 1e-6);
    EXPECT_EQ(p.preds[i], std::max_element(p.probs[i].begin(), p.probs[i].end()) - p.probs[i].begin());
  }
  auto one = predict(net, data, {}, 1);
  for (std::size_t i = 0; i < data.size(); ++i) EXPECT_NEAR(one.probs[i][0], p.probs[i][0], 1e-6);
}
