#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"
#include "vesselkit/frangi.hpp"
#include "vesselkit/gradcheck.hpp"
#include "vesselkit/metrics.hpp"
#include "vesselkit/ops.hpp"
#include "vesselkit/phantom.hpp"
#include "vesselkit/pipeline.hpp"

namespace vk {
namespace {

TEST(Vesselness, PointValues) {
  EXPECT_NEAR(vesselness(1.0, 2.0, 0.5, 1.0), std::exp(-0.5) * (1.0 - std::exp(-2.5)), 1e-9);
  EXPECT_NEAR(vesselness(1.0, 2.0, 0.5, 1.0), 0.5567436, 1e-7);
  EXPECT_NEAR(vesselness(0.0, 10.0, 0.5, 1.0), 1.0, 1e-12);
  for (const double l1 : {-1.0, -0.3, 0.0, 0.7, 1.0}) EXPECT_EQ(vesselness(l1, -1.0, 0.5, 1.0), 0.0);
  EXPECT_EQ(vesselness(0.0, 0.0, 0.5, 1.0), 0.0);
}

TEST(Vesselness, RejectsNonPositiveParameters) {
  EXPECT_THROW(vesselness(1.0, 2.0, 0.0, 1.0), ConfigError);
  EXPECT_THROW(vesselness(1.0, 2.0, 0.5, -1.0), ConfigError);
}

TEST(Vesselness, BrightPolarityFlipsTheGate) {
  EXPECT_EQ(vesselness(0.1, 2.0, 0.5, 1.0, Polarity::kBrightOnDark), 0.0);
  EXPECT_NEAR(vesselness(-0.1, -2.0, 0.5, 1.0, Polarity::kBrightOnDark), vesselness(0.1, 2.0, 0.5, 1.0), 1e-15);
}

TEST(Vesselness, RangeAndMonotonicity) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 2000; ++i) {
    double a = u(rng), b = u(rng);
    if (std::abs(a) > std::abs(b)) std::swap(a, b);
    const double v = vesselness(a, b, 0.5, 1.0);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    if (b < 0.0) EXPECT_EQ(v, 0.0);
  }
  // Non-increasing in |lambda1| with lambda2 fixed: the blobness penalty
  // outweighs the structureness gain.
  double prev = 2.0;
  for (double l1 = 0.0; l1 <= 3.0; l1 += 0.1) {
    const double v = vesselness(l1, 3.0, 0.5, 1.0);
    EXPECT_LE(v, prev + 1e-15);
    prev = v;
  }
  // Non-decreasing in S^2 at fixed blobness ratio.
  prev = -1.0;
  for (double s = 0.1; s <= 5.0; s += 0.1) {
    const double v = vesselness(0.3 * s, s, 0.5, 1.0);
    EXPECT_GE(v, prev - 1e-15);
    prev = v;
  }
}

TEST(Vesselness, GraphVersionMatchesScalar) {
  const auto lam = testing::random_tensor(Shape{1, 2, 5, 5}, 4, -1.0, 2.0);
  Graph<double> g;
  auto v = vesselness<double>(g.constant(lam), g.constant(Tensor<double>::scalar(0.5)),
                              g.constant(Tensor<double>::scalar(1.0)));
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      EXPECT_NEAR(v.value()(0, 0, y, x), vesselness(lam(0, 0, y, x), lam(0, 1, y, x), 0.5, 1.0), 1e-14);
    }
}

TEST(Vesselness, GradientCheckAtTolerance1em4) {
  const auto f = fragment_for("vesselness", 5);
  ASSERT_TRUE(f.has_value());
  const auto c = check_fragment(*f, GradCheckOptions{1e-5, 1e-4, 20, 11, 400});
  EXPECT_TRUE(c.passed) << c.max_rel_error;
}

TEST(ClassicalFrangi, ConstantImageAndRange) {
  const ScaleBank bank;
  const auto params = VesselnessParams::defaults(8);
  const auto flat = classical_frangi(ImagePlane(40, 40, 0.5), bank, params);
  for (const double v : flat.response.data) EXPECT_LT(v, 1e-12);
  const auto noisy = classical_frangi(testing::random_plane(40, 40, 9), bank, params);
  ASSERT_EQ(noisy.per_scale.size(), 8u);
  for (std::size_t i = 0; i < noisy.response.size(); ++i) {
    EXPECT_GE(noisy.response.data[i], 0.0);
    EXPECT_LE(noisy.response.data[i], 1.0);
    for (const auto& s : noisy.per_scale) EXPECT_GE(noisy.response.data[i], s.data[i]);
  }
}

TEST(ClassicalFrangi, DefaultPhantomAucAboveThreshold) {
  PhantomConfig pc;
  pc.seed = 1010;
  const auto s = generate(pc);
  const auto r = classical_frangi(s.image, ScaleBank{}, VesselnessParams::defaults(8));
  const double auc = roc_auc(r.response, s.label, s.fov);
  EXPECT_GE(auc, 0.95);
}

ImagePlane small_phantom(std::uint64_t seed) {
  PhantomConfig pc;
  pc.height = pc.width = 64;
  pc.n_trees = 3;
  pc.seed = seed;
  return generate(pc).image;
}

TEST(FrangiNet, ReproducesClassicalPerScaleMapsAtInit) {
  const FrangiNet<double> net;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto img = small_phantom(seed);
    const auto ref = classical_frangi(img, ScaleBank{}, VesselnessParams::defaults(8));
    Graph<double> g;
    auto stack = net.scale_responses(g, g.constant(to_tensor<double>(img)));
    for (int s = 0; s < 8; ++s) {
      EXPECT_LT(testing::max_abs_diff(plane_from_tensor(stack.value(), 0, s), ref.per_scale[s]), 1e-6);
    }
  }
}

TEST(FrangiNet, ProbabilitiesSumToOneAndRankLikeMeanVesselness) {
  const FrangiNet<double> net;
  const auto img = testing::random_plane(32, 32, 21);
  Graph<double> g;
  auto x = g.constant(to_tensor<double>(img));
  auto stack = net.scale_responses(g, x);
  auto probs = net.forward(g, x);
  const int n = 32 * 32;
  std::vector<double> mean_v(n), p(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int s = 0; s < 8; ++s) acc += stack.value()[static_cast<std::size_t>(s) * n + i];
    mean_v[i] = acc / 8.0;
    p[i] = probs.value()[static_cast<std::size_t>(n) + i];
    EXPECT_NEAR(probs.value()[i] + p[i], 1.0, 1e-12);
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return mean_v[a] < mean_v[b]; });
  for (int i = 1; i < n; ++i) EXPECT_LE(p[order[i - 1]], p[order[i]]);
}

TEST(FrangiNet, ParameterCounts) {
  const FrangiNet<double> net;
  const auto b = net.count_params();
  std::size_t head1 = 0, bc = 0;
  for (const auto& [name, count] : b.entries) {
    if (name == "head 1x1 conv 8->8") head1 = count;
    if (name == "beta, c") bc = count;
  }
  EXPECT_EQ(head1, 72u);
  EXPECT_EQ(bc, 16u);
  EXPECT_EQ(b.total(), 6610u);
  EXPECT_LT(std::abs(static_cast<double>(b.total()) - 6525.0) / 6525.0, 0.10);
}

TEST(FrangiNet, FullGradientCheck) {
  const auto report = grad_check_pipeline(preset("FN"), GradCheckOptions{});
  EXPECT_TRUE(report.passed()) << report.format();
}

TEST(FrangiNet, KernelsStayBlindToConstantsAfterPerturbation) {
  FrangiNet<double> net;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 0.01);
  for (auto* p : net.params().all()) {
    if (p->name.find("hessian_kernel") == std::string::npos) continue;
    for (auto& v : p->value.values()) v += 0.01 + n(rng);
  }
  Graph<double> g;
  auto stack = net.scale_responses(g, g.constant(Tensor<double>(Shape{1, 1, 60, 60}, 0.6)));
  for (int s = 0; s < 8; ++s) EXPECT_LT(stack.value()(0, s, 30, 30), 1e-12);
}

}  // namespace
}  // namespace vk
