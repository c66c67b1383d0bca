#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "vesselkit/ops.hpp"
#include "vesselkit/unet.hpp"

namespace vk {
namespace {

TEST(UNetCount, ClosedFormMatchesInstances) {
  for (const int levels : {1, 2, 3}) {
    for (const int f : {2, 8, 16}) {
      for (const auto mode : {UNetMode::kSegment, UNetMode::kPreprocess}) {
        UNetConfig cfg{levels, f, mode};
        const UNet<float> net(cfg);
        EXPECT_EQ(net.count_params().total(), count_unet_params(cfg).total());
        EXPECT_EQ(net.params().count_trainable(), count_unet_params(cfg).total());
      }
    }
  }
}

TEST(UNetCount, ReferenceConfiguration) {
  const auto b = count_unet_params(UNetConfig{3, 16, UNetMode::kSegment});
  EXPECT_EQ(b.total(), 109730u);
  // A 3x3 conv 16 -> 32 with bias, and a norm layer on 32 channels.
  EXPECT_EQ(count_unet_params(UNetConfig{1, 1}).total() > 0, true);
  EXPECT_EQ(16 * 32 * 9 + 32, 4640);
  UNetConfig no_norm{3, 16, UNetMode::kSegment, false};
  EXPECT_EQ(b.total() - count_unet_params(no_norm).total(), 2u * 2u * (16 + 32 + 64 + 32 + 16));
}

TEST(UNet, OutputShapesAndModeContracts) {
  for (const auto& [h, w] : {std::pair{16, 16}, std::pair{13, 17}, std::pair{9, 30}}) {
    Graph<double> g;
    auto x = g.constant(testing::random_tensor(Shape{2, 1, h, w}, 4, 0.0, 1.0));
    const UNet<double> seg(UNetConfig{3, 4, UNetMode::kSegment});
    auto s = seg.forward(g, x);
    EXPECT_EQ(s.shape(), (Shape{2, 2, h, w}));
    for (int n = 0; n < 2; ++n)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) EXPECT_NEAR(s.value()(n, 0, y, xx) + s.value()(n, 1, y, xx), 1.0, 1e-12);
    const UNet<double> pre(UNetConfig{2, 4, UNetMode::kPreprocess});
    auto p = pre.forward(g, x);
    EXPECT_EQ(p.shape(), (Shape{2, 1, h, w}));
    for (const double v : p.value().values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

void check_parameter_gradients(const UNetConfig& cfg) {
  UNet<double> net(cfg, 3);
  const auto xt = testing::random_tensor(Shape{2, 1, 6, 6}, 5, 0.0, 1.0);
  const Shape out{2, cfg.out_channels(), 6, 6};
  const auto wt = testing::random_tensor(out, 6);
  auto loss = [&]() {
    Graph<double> g;
    return sum<double>(mul<double>(net.forward(g, g.constant(xt), true), g.constant(wt))).value()[0];
  };
  net.params().zero_grad();
  {
    Graph<double> g;
    g.backward(sum<double>(mul<double>(net.forward(g, g.constant(xt), true), g.constant(wt))));
  }
  for (auto* p : net.params().trainable()) {
    const auto analytic = p->grad;
    const auto numeric = testing::numeric_gradient(
        [&](const Tensor<double>& v) {
          const auto saved = p->value;
          p->value = v;
          const double l = loss();
          p->value = saved;
          return l;
        },
        p->value, 1e-5);
    // Biases ahead of a norm layer have zero gradient; the floor absorbs difference noise.
    EXPECT_LT(testing::max_relative_error(analytic, numeric, 1e-3), 1e-4) << p->name;
  }
}

TEST(UNet, GradientCheckOneLevelTwoFeatures) {
  check_parameter_gradients(UNetConfig{1, 2, UNetMode::kSegment});
}

TEST(UNet, GradientCheckTwoLevelsPreprocessHead) {
  check_parameter_gradients(UNetConfig{2, 2, UNetMode::kPreprocess});
}

TEST(NormLayer, StandardizedInputPassesThrough) {
  Tensor<double> x(Shape{4, 1, 1, 2});
  const double vals[] = {1, -1, 1, -1, 1, -1, 1, -1};
  for (int i = 0; i < 8; ++i) x[i] = vals[i];
  Graph<double> g;
  auto y = norm_layer<double>(g.constant(x), g.constant(Tensor<double>(Shape{1, 1, 1, 1}, 1.0)),
                              g.constant(Tensor<double>(Shape{1, 1, 1, 1}, 0.0)), true, nullptr, nullptr);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(y.value()[i], vals[i], 1e-5);
}

TEST(NormLayer, ConstantChannelGivesShiftAndRunningStatsBlend) {
  Tensor<double> x(Shape{2, 1, 2, 2}, 3.0);
  Tensor<double> rm(Shape{1, 1, 1, 1}, 1.0), rv(Shape{1, 1, 1, 1}, 2.0);
  Graph<double> g;
  auto y = norm_layer<double>(g.constant(x), g.constant(Tensor<double>(Shape{1, 1, 1, 1}, 2.0)),
                              g.constant(Tensor<double>(Shape{1, 1, 1, 1}, 0.7)), true, &rm, &rv);
  for (const double v : y.value().values()) EXPECT_NEAR(v, 0.7, 1e-12);
  EXPECT_NEAR(rm[0], 0.9 * 1.0 + 0.1 * 3.0, 1e-15);
  EXPECT_NEAR(rv[0], 0.9 * 2.0, 1e-15);
}

TEST(NormLayer, InferenceUsesRunningStatistics) {
  const auto x = testing::random_tensor(Shape{1, 2, 3, 3}, 7);
  Tensor<double> rm(Shape{1, 2, 1, 1}), rv(Shape{1, 2, 1, 1});
  rm[0] = 0.5;
  rm[1] = -0.25;
  rv[0] = 4.0;
  rv[1] = 0.25;
  Graph<double> g;
  auto y = norm_layer<double>(g.constant(x), g.constant(Tensor<double>(Shape{1, 2, 1, 1}, 1.0)),
                              g.constant(Tensor<double>(Shape{1, 2, 1, 1}, 0.0)), false, &rm, &rv, 0.9, 1e-5);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 9; ++i) {
      EXPECT_NEAR(y.value()[c * 9 + i], (x[c * 9 + i] - rm[c]) / std::sqrt(rv[c] + 1e-5), 1e-12);
    }
}

TEST(UNet, InferenceModeIsIndependentOfTheBatch) {
  UNet<double> net(UNetConfig{2, 4});
  net.set_training(false);
  const auto a = testing::random_tensor(Shape{1, 1, 8, 8}, 1, 0.0, 1.0);
  const auto b = testing::random_tensor(Shape{1, 1, 8, 8}, 2, 0.0, 1.0);
  Tensor<double> both(Shape{2, 1, 8, 8});
  for (std::size_t i = 0; i < 64; ++i) {
    both[i] = a[i];
    both[64 + i] = b[i];
  }
  Graph<double> g;
  auto single = net.forward(g, g.constant(a));
  auto pair = net.forward(g, g.constant(both));
  for (std::size_t i = 0; i < 128; ++i) EXPECT_NEAR(single.value()[i], pair.value()[i], 1e-12);
}

}  // namespace
}  // namespace vk
