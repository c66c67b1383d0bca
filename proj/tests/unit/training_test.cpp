#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"
#include "vesselkit/experiment.hpp"
#include "vesselkit/ops.hpp"
#include "vesselkit/training.hpp"

namespace vk {
namespace {

Tensor<double> two_class(const Tensor<double>& vessel) {
  const Shape s = vessel.shape();
  Tensor<double> t(Shape{s.n, 2, s.h, s.w});
  const std::size_t plane = s.plane_size();
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      t[(2 * n + 1) * plane + i] = vessel[n * plane + i];
      t[(2 * n) * plane + i] = 1.0 - vessel[n * plane + i];
    }
  return t;
}

TEST(FocalLoss, SinglePixelValue) {
  Graph<double> g;
  Tensor<double> probs(Shape{1, 2, 1, 1}, 0.5);
  const Tensor<double> label(Shape{1, 1, 1, 1}, 1.0), weight(Shape{1, 1, 1, 1}, 1.0);
  const auto loss = focal_loss<double>(g.constant(probs), label, weight, LossConfig{});
  EXPECT_NEAR(loss.value()[0], 0.25 * std::log(2.0), 1e-10);
  EXPECT_NEAR(loss.value()[0], 0.173287, 1e-6);
}

TEST(FocalLoss, PerfectPredictionsCostNothing) {
  const auto labels = testing::random_tensor(Shape{2, 1, 4, 4}, 1, 0.0, 1.0);
  Tensor<double> binary(labels.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) binary[i] = labels[i] > 0.5 ? 1.0 : 0.0;
  Graph<double> g;
  const auto loss = focal_loss<double>(g.constant(two_class(binary)), binary,
                                       Tensor<double>(binary.shape(), 1.0), LossConfig{});
  EXPECT_NEAR(loss.value()[0], 0.0, 1e-11);
}

TEST(FocalLoss, GammaZeroIsWeightedCrossEntropy) {
  const Shape s{2, 1, 5, 5};
  const auto vessel = testing::random_tensor(s, 2, 0.02, 0.98);
  const auto noise = testing::random_tensor(s, 3, 0.0, 1.0);
  const auto weight = testing::random_tensor(s, 4, 0.1, 3.0);
  Tensor<double> labels(s);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = noise[i] > 0.7 ? 1.0 : 0.0;
  for (const auto balance : {ClassBalance::kAutoFromBatch, ClassBalance::kFixed}) {
    LossConfig cfg;
    cfg.gamma = 0.0;
    cfg.balance = balance;
    cfg.pos_weight = 3.0;
    cfg.neg_weight = 0.5;
    const auto alpha = class_weights<double>(labels, weight, cfg);
    double oracle = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double pt = labels[i] > 0.5 ? vessel[i] : 1.0 - vessel[i];
      oracle -= alpha[labels[i] > 0.5 ? 1 : 0] * weight[i] * std::log(pt + cfg.log_epsilon);
    }
    oracle /= static_cast<double>(labels.size());
    Graph<double> g;
    EXPECT_NEAR(focal_loss<double>(g.constant(two_class(vessel)), labels, weight, cfg).value()[0], oracle, 1e-10);
  }
}

TEST(FocalLoss, AutoClassWeightsAverageToOne) {
  Tensor<double> labels(Shape{1, 1, 2, 5});
  labels[0] = labels[1] = 1.0;
  Tensor<double> weight(labels.shape(), 1.0);
  weight[9] = 0.0;  // excluded pixel
  const auto a = class_weights<double>(labels, weight, LossConfig{});
  EXPECT_NEAR(a[1], 9.0 / (2 * 2), 1e-15);
  EXPECT_NEAR(a[0], 9.0 / (2 * 7), 1e-15);
  EXPECT_NEAR((2 * a[1] + 7 * a[0]) / 9.0, 1.0, 1e-15);
  const auto single = class_weights<double>(Tensor<double>(labels.shape()), weight, LossConfig{});
  EXPECT_EQ(single[0], 1.0);
  EXPECT_EQ(single[1], 1.0);
}

TEST(FocalLoss, RejectsNonProbabilities) {
  Graph<double> g;
  Tensor<double> probs(Shape{1, 2, 1, 1});
  probs[0] = -0.1;
  probs[1] = 1.1;
  const Tensor<double> ones(Shape{1, 1, 1, 1}, 1.0);
  EXPECT_THROW(focal_loss<double>(g.constant(probs), ones, ones, LossConfig{}), ContractError);
  LossConfig bad;
  bad.gamma = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(FocalLoss, NonNegativeOnRandomInputs) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Shape sh{1, 1, 3, 3};
    const auto vessel = testing::random_tensor(sh, s, 0.0, 1.0);
    const auto noise = testing::random_tensor(sh, s + 100, 0.0, 1.0);
    Tensor<double> labels(sh);
    for (std::size_t i = 0; i < 9; ++i) labels[i] = noise[i] > 0.5 ? 1.0 : 0.0;
    Graph<double> g;
    EXPECT_GE(focal_loss<double>(g.constant(two_class(vessel)), labels, Tensor<double>(sh, 1.0), LossConfig{})
                  .value()[0],
              0.0);
  }
}

struct LossFixture {
  Parameter<double> w1{"w1", testing::random_tensor(Shape{2, 1, 3, 3}, 7), {}, ParamRole::kConvWeight};
  Parameter<double> w2{"w2", testing::random_tensor(Shape{1, 2, 3, 3}, 8), {}, ParamRole::kConvWeight};
  Parameter<double> b{"b", testing::random_tensor(Shape{1, 2, 1, 1}, 9), {}, ParamRole::kBias};
  Tensor<double> vessel = testing::random_tensor(Shape{1, 1, 4, 4}, 10, 0.05, 0.95);
  Tensor<double> labels{Shape{1, 1, 4, 4}};
  Tensor<double> weight = testing::random_tensor(Shape{1, 1, 4, 4}, 11, 0.5, 2.0);
  Tensor<double> prep_in = testing::random_tensor(Shape{1, 1, 4, 4}, 12, 0.0, 1.0);
  Tensor<double> prep_out = testing::random_tensor(Shape{1, 1, 4, 4}, 13, 0.0, 1.0);

  LossFixture() {
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3 == 0 ? 1.0 : 0.0;
  }
  std::vector<Parameter<double>*> params() { return {&w1, &w2, &b}; }
};

TEST(TotalLoss, DecomposesIntoIndependentTerms) {
  LossFixture f;
  LossConfig cfg;
  cfg.use_rs = true;
  double focal_oracle;
  {
    Graph<double> g;
    focal_oracle = focal_loss<double>(g.constant(two_class(f.vessel)), f.labels, f.weight, cfg).value()[0];
  }
  double sq = 0.0;
  for (const double v : f.w1.value.values()) sq += v * v;
  for (const double v : f.w2.value.values()) sq += v * v;
  const double rw = sq / 36.0;
  double rs = 0.0;
  for (std::size_t i = 0; i < 16; ++i) rs += std::pow(f.prep_in[i] - f.prep_out[i], 2);
  rs /= 16.0;
  Graph<double> g;
  const auto terms = total_loss<double>(g.constant(two_class(f.vessel)), f.labels, f.weight, f.params(),
                                        g.constant(f.prep_in), g.constant(f.prep_out), cfg);
  EXPECT_NEAR(terms.focal, focal_oracle, 1e-12);
  EXPECT_NEAR(terms.reg_w, rw, 1e-12);
  EXPECT_NEAR(terms.reg_s, rs, 1e-12);
  EXPECT_NEAR(terms.total.value()[0], focal_oracle + 0.2 * rw + 0.1 * rs, 1e-10);
}

TEST(TotalLoss, ZeroScalesReduceToFocal) {
  LossFixture f;
  LossConfig cfg;
  cfg.use_rs = true;
  cfg.lambda_w = cfg.lambda_s = 0.0;
  Graph<double> g;
  const auto terms = total_loss<double>(g.constant(two_class(f.vessel)), f.labels, f.weight, f.params(),
                                        g.constant(f.prep_in), g.constant(f.prep_out), cfg);
  EXPECT_EQ(terms.total.value()[0], terms.focal);
}

TEST(TotalLoss, PerfectCaseIsZeroAndShapesAreChecked) {
  LossFixture f;
  for (auto* p : f.params()) p->value.fill(0.0);
  LossConfig cfg;
  cfg.use_rs = true;
  Graph<double> g;
  const auto terms = total_loss<double>(g.constant(two_class(f.labels)), f.labels, f.weight, f.params(),
                                        g.constant(f.prep_in), g.constant(f.prep_in), cfg);
  EXPECT_NEAR(terms.total.value()[0], 0.0, 1e-10);
  EXPECT_THROW(total_loss<double>(g.constant(two_class(f.labels)), f.labels, f.weight, f.params(),
                                  g.constant(f.prep_in), g.constant(Tensor<double>(Shape{1, 1, 3, 4})), cfg),
               ConfigError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameter<double> p{"p", testing::random_tensor(Shape{1, 1, 3, 3}, 1), Tensor<double>(Shape{1, 1, 3, 3}),
                      ParamRole::kConvWeight};
  const auto before = p.value;
  OptimizerState<double> st;
  adam_step(st, {&p});
  EXPECT_EQ(testing::values_of(p.value), testing::values_of(before));
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesEachCoordinateByAboutTheLearningRate) {
  const auto g = testing::random_tensor(Shape{1, 1, 8, 8}, 2, -5.0, 5.0);
  Parameter<double> p{"p", Tensor<double>(g.shape()), g, ParamRole::kConvWeight};
  OptimizerState<double> st;
  st.cfg.lr0 = 1e-3;
  adam_step(st, {&p});
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (std::abs(g[i]) <= 1e-3) continue;
    EXPECT_GE(std::abs(p.value[i]), 0.9e-3);
    EXPECT_LE(std::abs(p.value[i]), 1e-3);
    EXPECT_EQ(std::signbit(p.value[i]), !std::signbit(g[i]));
  }
}

TEST(Adam, ConvergesOnQuadratic) {
  Parameter<double> p{"theta", Tensor<double>(Shape{1, 1, 1, 1}, 1.0), Tensor<double>(Shape{1, 1, 1, 1}),
                      ParamRole::kConvWeight};
  OptimizerState<double> st;
  st.cfg.lr0 = 0.1;
  for (int i = 0; i < 500; ++i) {
    p.grad[0] = 2.0 * p.value[0];
    adam_step(st, {&p});
  }
  EXPECT_LT(std::abs(p.value[0]), 1e-3);
}

TEST(Adam, LearningRateDecays) {
  OptimizerState<double> st;
  st.cfg.lr0 = 1.0;
  st.cfg.decay = 0.5;
  st.step = 3;
  EXPECT_DOUBLE_EQ(st.learning_rate(), 0.125);
}

TEST(Adam, MismatchedGradientIsAContractError) {
  Parameter<double> p{"p", Tensor<double>(Shape{1, 1, 2, 2}), Tensor<double>(Shape{1, 1, 1, 1}),
                      ParamRole::kConvWeight};
  OptimizerState<double> st;
  EXPECT_THROW(adam_step(st, {&p}), ContractError);
}

LabeledSample small_sample(int h, int w, std::uint64_t seed) {
  PhantomConfig pc;
  pc.height = h;
  pc.width = w;
  pc.n_trees = 2;
  pc.seed = seed;
  return generate(pc);
}

TEST(Patches, DeterministicAndInsideBounds) {
  const auto s = small_sample(60, 50, 3);
  std::mt19937_64 r1(9), r2(9);
  const auto a = sample_patches(s, 24, 30, r1);
  const auto b = sample_patches(s, 24, 30, r2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].top, b[i].top);
    EXPECT_EQ(a[i].left, b[i].left);
    EXPECT_GE(a[i].top, 0);
    EXPECT_LE(a[i].top, 60 - 24);
    EXPECT_LE(a[i].left, 50 - 24);
    EXPECT_EQ(a[i].image(5, 7), s.image(a[i].top + 5, a[i].left + 7));
    EXPECT_EQ(a[i].label(5, 7), s.label(a[i].top + 5, a[i].left + 7));
    EXPECT_EQ(a[i].weight(5, 7), s.weight(a[i].top + 5, a[i].left + 7));
  }
}

TEST(Patches, SmallImagesAreMirrorPadded) {
  const auto s = small_sample(20, 30, 5);
  std::mt19937_64 rng(1);
  const auto p = sample_patches(s, 40, 3, rng);
  for (const auto& patch : p) {
    EXPECT_EQ(patch.image.height, 40);
    EXPECT_EQ(patch.image.width, 40);
  }
  const auto padded = mirror_pad_to(s.image, 40, 40);
  // Reflect-101 about the first row of the original.
  EXPECT_EQ(padded(9, 5), padded(11, 5));
}

TEST(Patches, CornersAreUniform) {
  const auto s = small_sample(100, 100, 6);
  std::mt19937_64 rng(12);
  const auto patches = sample_patches(s, 21, 10000, rng);
  std::array<int, 16> bins{};
  for (const auto& p : patches) ++bins[(p.top / 20) * 4 + p.left / 20];
  double chi2 = 0.0;
  for (const int c : bins) chi2 += std::pow(c - 625.0, 2) / 625.0;
  EXPECT_LT(chi2, 30.58);  // chi-square critical value, 15 dof, p = 0.01
}

TEST(Augment, ZeroSpecIsIdentity) {
  const auto s = small_sample(64, 64, 7);
  std::mt19937_64 rng(2);
  auto batch = sample_patches(s, 32, 4, rng);
  const auto orig = batch;
  augment(batch, AugmentSpec::none(), rng);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    EXPECT_EQ(batch[i].image.data, orig[i].image.data);
    EXPECT_EQ(batch[i].label.data, orig[i].label.data);
    EXPECT_EQ(batch[i].weight.data, orig[i].weight.data);
    EXPECT_EQ(batch[i].fov.data, orig[i].fov.data);
  }
}

TEST(Augment, QuarterTurnIsLossless) {
  const auto s = small_sample(64, 64, 8);
  std::mt19937_64 rng(3);
  auto batch = sample_patches(s, 31, 2, rng);
  const auto orig = batch;
  AugmentSpec spec = AugmentSpec::none();
  spec.rotation_deg = {90.0, 90.0};
  augment(batch, spec, rng);
  const int n = 31;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        EXPECT_EQ(batch[i].image(y, x), orig[i].image(x, n - 1 - y));
        EXPECT_EQ(batch[i].label(y, x), orig[i].label(x, n - 1 - y));
        EXPECT_EQ(batch[i].weight(y, x), orig[i].weight(x, n - 1 - y));
      }
}

TEST(Augment, DeterministicUnderSeedAndClamped) {
  const auto s = small_sample(64, 64, 9);
  std::mt19937_64 r0(4);
  const auto base = sample_patches(s, 32, 5, r0);
  auto a = base, b = base;
  std::mt19937_64 r1(77), r2(77);
  AugmentSpec spec;
  spec.noise_sigma = 0.3;
  augment(a, spec, r1);
  augment(b, spec, r2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.data, b[i].image.data);
    EXPECT_EQ(a[i].label.data, b[i].label.data);
    for (const double v : a[i].image.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(StackBatch, WeightIsMaskedByFov) {
  const auto s = small_sample(40, 40, 10);
  std::mt19937_64 rng(5);
  const auto batch = sample_patches(s, 40, 2, rng);
  const auto t = stack_batch<double>(batch);
  EXPECT_EQ(t.image.shape(), (Shape{2, 1, 40, 40}));
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      EXPECT_EQ(t.weight(1, 0, y, x), batch[1].fov(y, x) ? batch[1].weight(y, x) : 0.0);
      EXPECT_EQ(t.label(1, 0, y, x), batch[1].label(y, x) ? 1.0 : 0.0);
    }
}

PipelineConfig tiny_config() {
  PipelineConfig cfg = preset("GF+FN");
  cfg.c = 0.05;
  cfg.data.suite_size = 6;
  cfg.data.phantom.height = cfg.data.phantom.width = 96;
  cfg.data.phantom.n_trees = 3;
  cfg.train.batch = 4;
  cfg.train.patch = 48;
  cfg.train.val_every = 5;
  cfg.train.optimizer.lr0 = 1e-3;
  return cfg;
}

TEST(TrainLoop, ZeroStepsKeepsInitialization) {
  auto cfg = tiny_config();
  cfg.train.steps = 0;
  const auto suite = generate_suite(cfg.data.suite_size, cfg.data.suite_seed, cfg.data.phantom);
  Pipeline<float> p(cfg);
  const auto init = snapshot(p);
  const auto r = train_loop(p, prepare_samples(suite.train, cfg.data), prepare_samples(suite.val, cfg.data), 1);
  const auto after = snapshot(p);
  ASSERT_EQ(init.size(), after.size());
  for (std::size_t i = 0; i < init.size(); ++i) EXPECT_EQ(testing::values_of(init[i]), testing::values_of(after[i]));
  ASSERT_EQ(r.best.size(), init.size());
  EXPECT_EQ(r.best_step, 0);
}

TEST(TrainLoop, SameSeedGivesIdenticalHistoriesAndParameters) {
  auto cfg = tiny_config();
  cfg.train.steps = 8;
  const auto suite = generate_suite(cfg.data.suite_size, cfg.data.suite_seed, cfg.data.phantom);
  const auto train = prepare_samples(suite.train, cfg.data);
  const auto val = prepare_samples(suite.val, cfg.data);
  Pipeline<float> a(cfg), b(cfg);
  const auto ra = train_loop(a, train, val, 42);
  const auto rb = train_loop(b, train, val, 42);
  EXPECT_EQ(loss_history_csv(ra.history), loss_history_csv(rb.history));
  const auto sa = snapshot(a), sb = snapshot(b);
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(testing::values_of(sa[i]), testing::values_of(sb[i]));
}

TEST(TrainLoop, EveryTrainableTensorReceivesGradient) {
  auto cfg = tiny_config();
  const auto suite = generate_suite(cfg.data.suite_size, cfg.data.suite_seed, cfg.data.phantom);
  Pipeline<double> p(cfg);
  std::mt19937_64 rng(3);
  auto batch = sample_patches(suite.train[0], 48, 4, rng);
  const auto t = stack_batch<double>(batch);
  Graph<double> g;
  const auto fwd = p.forward(g, g.constant(t.image));
  const auto terms = total_loss<double>(fwd.probs, t.label, t.weight, p.trainable(), fwd.prep_in, fwd.prep_out,
                                        cfg.loss);
  for (auto* q : p.trainable()) q->zero_grad();
  g.backward(terms.total);
  for (auto* q : p.trainable()) {
    double mag = 0.0;
    for (const double v : q->grad.values()) mag += std::abs(v);
    EXPECT_GT(mag, 0.0) << q->name;
  }
}

}  // namespace
}  // namespace vk
