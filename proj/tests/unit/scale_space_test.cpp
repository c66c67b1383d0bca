#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "vesselkit/gradcheck.hpp"
#include "vesselkit/phantom.hpp"
#include "vesselkit/scale_space.hpp"

namespace vk {
namespace {

double plane_sum(const ImagePlane& p) {
  double s = 0.0;
  for (const double v : p.data) s += v;
  return s;
}

TEST(Kernels, SizeRuleAndZeroSum) {
  KernelSizeRule rule;
  EXPECT_EQ(rule.size(0.5), 5);
  EXPECT_EQ(rule.size(1.0), 7);
  EXPECT_EQ(rule.size(4.0), 25);
  for (const double s : {0.5, 1.0, 2.5, 4.0}) {
    const auto k = gaussian_second_derivative_kernels(s, rule, true);
    EXPECT_NEAR(plane_sum(k.gxx), 0.0, 1e-15);
    EXPECT_NEAR(plane_sum(k.gyy), 0.0, 1e-15);
    EXPECT_NEAR(plane_sum(k.gxy), 0.0, 1e-15);
  }
  EXPECT_THROW(gaussian_second_derivative_kernels(0.0, rule, true), ConfigError);
  EXPECT_THROW(gaussian_second_derivative_kernels(-1.0, rule, true), ConfigError);
}

TEST(Kernels, SymmetryOfTheDerivativeKernels) {
  const auto k = gaussian_second_derivative_kernels(1.5, KernelSizeRule{}, true);
  const int n = k.size;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      EXPECT_NEAR(k.gxx(y, x), k.gxx(y, n - 1 - x), 1e-15);
      EXPECT_NEAR(k.gxx(y, x), k.gxx(n - 1 - y, x), 1e-15);
      EXPECT_NEAR(k.gxy(y, x), -k.gxy(y, n - 1 - x), 1e-15);
      EXPECT_NEAR(k.gxy(y, x), -k.gxy(n - 1 - y, x), 1e-15);
      EXPECT_NEAR(k.gxx(y, x), k.gyy(x, y), 1e-15);
    }
}

ImagePlane analytic_image(int size, double (*f)(double, double)) {
  ImagePlane img(size, size);
  const double c = size / 2;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) img(y, x) = f(x - c, y - c);
  return img;
}

TEST(Hessian, QuadraticWithinOnePercentForWideSupport) {
  const auto img = analytic_image(81, [](double x, double) { return x * x; });
  for (const double s : {1.0, 2.0, 3.0, 4.0}) {
    const auto h = hessian(img, s, KernelSizeRule{4.0}, true);
    EXPECT_NEAR(h.hxx(40, 40), 2.0 * s * s, 0.01 * 2.0 * s * s) << "sigma " << s;
  }
}

TEST(Hessian, QuadraticWithDefaultSupportEqualsTruncatedKernelMoment) {
  // The 3-sigma support truncates the Gaussian; the response is then the
  // kernel's second moment, below the continuous value 2 sigma^2.
  const auto img = analytic_image(81, [](double x, double) { return x * x; });
  for (const double s : {1.0, 2.0, 4.0}) {
    const auto k = gaussian_second_derivative_kernels(s, KernelSizeRule{}, true);
    double moment = 0.0;
    const int r = k.size / 2;
    for (int y = 0; y < k.size; ++y)
      for (int x = 0; x < k.size; ++x) moment += k.gxx(y, x) * (x - r) * (x - r);
    const auto h = hessian(img, k);
    EXPECT_NEAR(h.hxx(40, 40), moment, 1e-9 * std::abs(moment));
    EXPECT_LT(moment, 2.0 * s * s);
    EXPECT_GT(moment, 0.9 * 2.0 * s * s);
  }
}

TEST(Hessian, MixedDerivativeOfProduct) {
  const auto img = analytic_image(81, [](double x, double y) { return x * y; });
  for (const double s : {1.0, 2.0, 3.0}) {
    const auto h = hessian(img, s, KernelSizeRule{4.0}, true);
    EXPECT_NEAR(h.hxy(40, 40), s * s, 0.01 * s * s);
    EXPECT_NEAR(h.hxx(40, 40), 0.0, 1e-9);
    EXPECT_NEAR(h.hyy(40, 40), 0.0, 1e-9);
  }
}

TEST(Hessian, ConstantImageHasNoCurvature) {
  const ImagePlane img(40, 40, 0.6);
  const auto h = hessian(img, 2.0);
  for (int y = 10; y < 30; ++y)
    for (int x = 10; x < 30; ++x) {
      EXPECT_LT(std::abs(h.hxx(y, x)), 1e-10);
      EXPECT_LT(std::abs(h.hxy(y, x)), 1e-10);
      EXPECT_LT(std::abs(h.hyy(y, x)), 1e-10);
    }
}

TEST(Hessian, VerticalDarkLineCurvesAcrossNotAlong) {
  ImagePlane img(41, 41, 0.8);
  for (int y = 0; y < 41; ++y)
    for (int x = 19; x <= 21; ++x) img(y, x) = 0.4;
  const auto h = hessian(img, 1.5);
  EXPECT_GT(std::abs(h.hxx(20, 20)), 50.0 * std::abs(h.hyy(20, 20)));
  EXPECT_GT(h.hxx(20, 20), 0.0);
}

TEST(Hessian, SymmetricImageGivesNoMixedResponseAtCenter) {
  const auto img = analytic_image(41, [](double x, double y) { return std::cos(0.3 * x) + 0.2 * y * y; });
  const auto h = hessian(img, 2.0);
  EXPECT_NEAR(h.hxy(20, 20), 0.0, 1e-12);
}

TEST(Hessian, TrainableMatchesClassical) {
  const auto img = testing::random_plane(23, 19, 3);
  const auto k = gaussian_second_derivative_kernels(2.0, KernelSizeRule{}, true);
  const auto ref = hessian(img, k);
  Graph<double> g;
  auto h = hessian<double>(g.constant(to_tensor<double>(img)), g.constant(hessian_kernel_tensor<double>(k)));
  EXPECT_LT(testing::max_abs_diff(plane_from_tensor(h.value(), 0, 0), ref.hxx), 1e-12);
  EXPECT_LT(testing::max_abs_diff(plane_from_tensor(h.value(), 0, 1), ref.hxy), 1e-12);
  EXPECT_LT(testing::max_abs_diff(plane_from_tensor(h.value(), 0, 2), ref.hyy), 1e-12);
}

TEST(Eigen, ClosedFormValues) {
  auto [a1, a2] = eig2x2_sym(2.0, 0.0, -5.0);
  EXPECT_NEAR(a1, 2.0, 1e-9);
  EXPECT_NEAR(a2, -5.0, 1e-9);
  auto [z1, z2] = eig2x2_sym(0.0, 0.0, 0.0);
  EXPECT_NEAR(z1, 0.0, 1e-6);
  EXPECT_NEAR(z2, 0.0, 1e-6);
  auto [l1, l2] = eig2x2_sym(1.0, 2.0, 3.0);
  EXPECT_NEAR(l1, 2.0 - std::sqrt(5.0), 1e-9);
  EXPECT_NEAR(l2, 2.0 + std::sqrt(5.0), 1e-9);
  EXPECT_NEAR(l1, -0.23607, 1e-5);
  EXPECT_NEAR(l2, 4.23607, 1e-5);
}

TEST(Eigen, TraceDeterminantAndOrderingOnRandomInputs) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng);
    auto [l1, l2] = eig2x2_sym(a, b, c, 0.0);
    EXPECT_NEAR(l1 + l2, a + c, 1e-9);
    EXPECT_NEAR(l1 * l2, a * c - b * b, 1e-9);
    EXPECT_LE(std::abs(l1), std::abs(l2));
  }
}

TEST(Eigen, GraphVersionMatchesScalarAndOrdersEveryPixel) {
  const auto stack = testing::random_tensor(Shape{1, 3, 6, 7}, 8);
  Graph<double> g;
  auto e = eig2x2_sym<double>(g.constant(stack));
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) {
      auto [l1, l2] = eig2x2_sym(stack(0, 0, y, x), stack(0, 1, y, x), stack(0, 2, y, x));
      EXPECT_NEAR(e.value()(0, 0, y, x), l1, 1e-12);
      EXPECT_NEAR(e.value()(0, 1, y, x), l2, 1e-12);
      EXPECT_LE(std::abs(e.value()(0, 0, y, x)), std::abs(e.value()(0, 1, y, x)));
    }
}

TEST(Eigen, GradientPassesAwayFromDegeneracy) {
  const auto f = fragment_for("eig2x2_sym", 17);
  ASSERT_TRUE(f.has_value());
  const auto c = check_fragment(*f, GradCheckOptions{});
  EXPECT_TRUE(c.passed) << c.max_rel_error;
}

TEST(Eigen, QuarterTurnRotatesTheLambda2Map) {
  PhantomConfig pc;
  pc.height = pc.width = 96;
  pc.n_trees = 3;
  pc.seed = 4;
  const auto img = generate(pc).image;
  ImagePlane rot(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) rot(img.width - 1 - x, y) = img(y, x);
  const auto e = eig2x2_sym(hessian(img, 2.0));
  const auto er = eig2x2_sym(hessian(rot, 2.0));
  double worst = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      worst = std::max(worst, std::abs(std::abs(e.lambda2(y, x)) - std::abs(er.lambda2(img.width - 1 - x, y))));
    }
  EXPECT_LT(worst, 1e-12);
}

}  // namespace
}  // namespace vk
