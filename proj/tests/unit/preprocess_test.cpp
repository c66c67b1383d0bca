#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support.hpp"
#include "vesselkit/preprocess.hpp"

namespace vk {
namespace {

ColorImage solid(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  ColorImage img{h, w, 3, {}};
  for (int i = 0; i < h * w; ++i) img.data.insert(img.data.end(), {r, g, b});
  return img;
}

TEST(ExtractGreen, PureColoursAndRandomImage) {
  for (const double v : extract_green(solid(4, 5, 0, 255, 0)).data) EXPECT_EQ(v, 1.0);
  for (const double v : extract_green(solid(4, 5, 255, 0, 0)).data) EXPECT_EQ(v, 0.0);
  std::mt19937_64 rng(1);
  ColorImage img{6, 7, 3, std::vector<std::uint8_t>(6 * 7 * 3)};
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng() % 256);
  const auto g = extract_green(img);
  ASSERT_EQ(g.height, 6);
  ASSERT_EQ(g.width, 7);
  for (int i = 0; i < 42; ++i) EXPECT_EQ(g.data[i], img.data[3 * i + 1] / 255.0);
  ColorImage gray{4, 4, 1, std::vector<std::uint8_t>(16)};
  EXPECT_THROW(extract_green(gray), ConfigError);
}

TEST(Clahe, ConstantImageIsUnchanged) {
  const ImagePlane img(64, 64, 0.42);
  for (const double v : clahe(img).data) EXPECT_DOUBLE_EQ(v, 0.42);
}

TEST(Clahe, SingleTileWithoutClippingIsGlobalEqualization) {
  // Values on bin centres, so the binned CDF equals the empirical CDF.
  const int bins = 256;
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> pick(0, bins - 1);
  ImagePlane img(40, 50);
  for (auto& v : img.data) v = (std::pow(pick(rng) / 255.0, 2.0) * 255.0 + 0.5) / bins;
  for (auto& v : img.data) v = (std::floor(v * bins) + 0.5) / bins;
  const auto out = clahe(img, ClaheConfig{1, 1, 1e9, bins});
  const double n = static_cast<double>(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double cdf = std::count_if(img.data.begin(), img.data.end(), [&](double u) { return u <= img.data[i]; }) / n;
    EXPECT_NEAR(out.data[i], cdf, 1e-12);
  }
}

TEST(Clahe, SingleTileMatchesGlobalEqualizationWithinOneBin) {
  const auto img = testing::random_plane(30, 30, 12);
  const auto out = clahe(img, ClaheConfig{1, 1, 1e9, 64});
  const double n = static_cast<double>(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double cdf = std::count_if(img.data.begin(), img.data.end(), [&](double u) { return u <= img.data[i]; }) / n;
    const int bin = std::min(63, static_cast<int>(img.data[i] * 64));
    const double bin_mass = std::count_if(img.data.begin(), img.data.end(), [&](double u) {
                              return std::min(63, static_cast<int>(u * 64)) == bin;
                            }) / n;
    EXPECT_LE(std::abs(out.data[i] - cdf), bin_mass + 1e-12);
  }
}

TEST(Clahe, OutputStaysInUnitRangeAndIsDeterministic) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto img = testing::random_plane(70, 53, s, -0.2, 1.3);
    const auto a = clahe(img, ClaheConfig{4, 3, 2.0, 256});
    for (const double v : a.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(a.data, clahe(img, ClaheConfig{4, 3, 2.0, 256}).data);
  }
  EXPECT_THROW(clahe(ImagePlane(8, 8), ClaheConfig{8, 8, 0.0, 256}), ConfigError);
}

BinaryPlane full_mask(int h, int w) { return BinaryPlane(h, w, 1); }

BinaryPlane random_mask(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  BinaryPlane m(h, w, 1);
  for (int k = 0; k < 4; ++k) {
    const int cy = static_cast<int>(rng() % h), cx = static_cast<int>(rng() % w);
    const int r = 1 + static_cast<int>(rng() % 4);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m(y, x) = 0;
  }
  return m;
}

// Keeps a pixel iff every pixel within Euclidean distance k is inside the
// image and set.
BinaryPlane brute_force_erode(const BinaryPlane& m, int k) {
  BinaryPlane out(m.height, m.width, 0);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool keep = m(y, x) != 0;
      for (int dy = -k; dy <= k && keep; ++dy)
        for (int dx = -k; dx <= k && keep; ++dx) {
          if (dy * dy + dx * dx > k * k) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= m.height || xx >= m.width || m(yy, xx) == 0) keep = false;
        }
      out(y, x) = keep ? 1 : 0;
    }
  return out;
}

TEST(ErodeFov, RectangleKeepsPixelsFartherThanKFromTheBorder) {
  const auto e = erode_fov(full_mask(20, 30), 4);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 30; ++x) {
      const int border = std::min({y + 1, x + 1, 20 - y, 30 - x});
      EXPECT_EQ(e(y, x) != 0, border > 4) << y << "," << x;
    }
}

TEST(ErodeFov, ZeroIsIdentity) {
  const auto m = random_mask(20, 20, 3);
  EXPECT_EQ(erode_fov(m, 0).data, m.data);
}

TEST(ErodeFov, MatchesBruteForceDiscOracle) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto m = random_mask(20, 20, s);
    for (const int k : {1, 2, 3, 4}) EXPECT_EQ(erode_fov(m, k).data, brute_force_erode(m, k).data) << s << " " << k;
  }
}

TEST(ErodeFov, CompositionAndMonotonicity) {
  EXPECT_EQ(erode_fov(erode_fov(full_mask(20, 20), 2), 2).data, erode_fov(full_mask(20, 20), 4).data);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto m = random_mask(20, 20, 50 + s);
    const auto twice = erode_fov(erode_fov(m, 2), 2);
    const auto once = erode_fov(m, 4);
    BinaryPlane prev = m;
    for (int k = 0; k <= 5; ++k) {
      const auto e = erode_fov(m, k);
      for (std::size_t i = 0; i < m.size(); ++i) EXPECT_LE(e.data[i], prev.data[i]);
      prev = e;
    }
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_GE(twice.data[i], once.data[i]);
  }
}

BinaryPlane bands(int h, int w, std::vector<std::pair<int, int>> columns) {
  BinaryPlane label(h, w, 0);
  for (const auto& [start, width] : columns)
    for (int y = 0; y < h; ++y)
      for (int x = start; x < start + width; ++x) label(y, x) = 1;
  return label;
}

TEST(WeightMap, TwoPixelBandHasDiameterTwo) {
  const auto label = bands(40, 40, {{19, 2}});
  const auto wm = weight_map(label, 0.18);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      if (label(y, x)) {
        EXPECT_DOUBLE_EQ(wm.diameter(y, x), 2.0);
        EXPECT_NEAR(wm.weight(y, x), 1.0 / (0.18 * 2.0), 1e-12);
        EXPECT_NEAR(wm.weight(y, x), 2.7778, 1e-4);
      } else {
        EXPECT_EQ(wm.weight(y, x), 1.0);
        EXPECT_EQ(wm.diameter(y, x), 0.0);
      }
    }
}

TEST(WeightMap, ThinVesselsOutweighWideOnes) {
  const auto label = bands(40, 60, {{10, 2}, {30, 6}});
  const auto wm = weight_map(label);
  EXPECT_NEAR(wm.diameter(20, 31), 6.0, 1e-12);
  EXPECT_GT(wm.weight(20, 10), wm.weight(20, 32));
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 60; ++x) {
      if (!label(y, x)) continue;
      EXPECT_GE(wm.diameter(y, x), 1.0);
      EXPECT_EQ(wm.weight(y, x) > 1.0, wm.diameter(y, x) < 1.0 / 0.18);
    }
}

TEST(WeightMap, EmptyLabelGivesUnitWeights) {
  const auto wm = weight_map(BinaryPlane(16, 16, 0));
  for (const double v : wm.weight.data) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(weight_map(BinaryPlane(4, 4, 0), 0.0), ConfigError);
}

TEST(DistanceTransform, MatchesBruteForce) {
  const auto m = random_mask(17, 23, 9);
  BinaryPlane features(m.height, m.width, 0);
  for (std::size_t i = 0; i < m.size(); ++i) features.data[i] = m.data[i] ? 0 : 1;
  const auto dt = distance_transform(features);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      double best = 1e300;
      for (int yy = 0; yy < m.height; ++yy)
        for (int xx = 0; xx < m.width; ++xx)
          if (features(yy, xx)) best = std::min(best, std::hypot(yy - y, xx - x));
      EXPECT_NEAR(dt.distance(y, x), best, 1e-12);
    }
}

}  // namespace
}  // namespace vk
