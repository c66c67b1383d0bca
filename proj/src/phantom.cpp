#include "vesselkit/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <random>

#include "vesselkit/preprocess.hpp"

namespace vk {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct Segment {
  double x0, y0, x1, y1;
  double r0, r1;
  double contrast;
};

struct Branch {
  double x, y, heading, diameter, contrast;
  int depth;
};

constexpr int kMaxDepth = 4;
constexpr std::size_t kMaxSegments = 40000;

void validate(const PhantomConfig& c) {
  if (c.height < 8 || c.width < 8) throw ConfigError("phantom: image must be at least 8x8");
  if (c.n_trees < 0) throw ConfigError("phantom: n_trees must be non-negative");
  if (!(c.diameter_min > 0.0) || c.diameter_max < c.diameter_min) {
    throw ConfigError("phantom: need 0 < diameter_min <= diameter_max");
  }
  if (!(c.taper > 0.0 && c.taper <= 1.0)) throw ConfigError("phantom: taper must lie in (0, 1]");
  if (!(c.step > 0.0)) throw ConfigError("phantom: step must be positive");
  if (c.tortuosity < 0.0 || c.noise_sigma < 0.0 || c.background < 0.0 || c.vignette < 0.0) {
    throw ConfigError("phantom: tortuosity, noise, background and vignette must be non-negative");
  }
  if (!(c.fov_radius > 0.0)) throw ConfigError("phantom: fov_radius must be positive");
  if (c.contrast_min < 0.0 || c.contrast_max < c.contrast_min) {
    throw ConfigError("phantom: need 0 <= contrast_min <= contrast_max");
  }
  if (c.background_max_frequency < 1) throw ConfigError("phantom: background_max_frequency must be >= 1");
}

std::vector<Segment> grow_trees(const PhantomConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> turn(0.0, cfg.tortuosity);
  const double cx = 0.5 * (cfg.width - 1), cy = 0.5 * (cfg.height - 1);
  const double radius = cfg.fov_radius * std::min(cfg.height, cfg.width);
  const double limit = 1.05 * radius;

  // Trees radiate from a hub placed off-center, like vessels leaving the optic disc.
  const double hub_angle = 2.0 * std::numbers::pi * unit(rng);
  const double hub_x = cx + 0.3 * radius * std::cos(hub_angle);
  const double hub_y = cy + 0.3 * radius * std::sin(hub_angle);

  std::vector<Segment> segments;
  std::vector<Branch> pending;
  for (int t = 0; t < cfg.n_trees; ++t) {
    const double a = 2.0 * std::numbers::pi * (t + 0.5 * unit(rng)) / std::max(cfg.n_trees, 1);
    Branch b;
    b.x = hub_x + 0.06 * radius * std::cos(a);
    b.y = hub_y + 0.06 * radius * std::sin(a);
    b.heading = a;
    b.diameter = cfg.diameter_max * (0.7 + 0.3 * unit(rng));
    b.contrast = cfg.contrast_min + (cfg.contrast_max - cfg.contrast_min) * unit(rng);
    b.depth = 0;
    pending.push_back(b);
  }
  while (!pending.empty() && segments.size() < kMaxSegments) {
    Branch b = pending.back();
    pending.pop_back();
    while (b.diameter >= cfg.diameter_min && segments.size() < kMaxSegments) {
      b.heading += turn(rng);
      const double d_next = std::max(b.diameter * cfg.taper, 0.0);
      const double nx = b.x + cfg.step * std::cos(b.heading);
      const double ny = b.y + cfg.step * std::sin(b.heading);
      segments.push_back({b.x, b.y, nx, ny, 0.5 * b.diameter,
                          0.5 * std::max(d_next, cfg.diameter_min), b.contrast});
      b.x = nx;
      b.y = ny;
      b.diameter = d_next;
      if (std::hypot(b.x - cx, b.y - cy) > limit) break;
      if (b.depth < kMaxDepth && unit(rng) < cfg.branch_probability) {
        Branch child = b;
        child.depth = b.depth + 1;
        child.diameter = b.diameter * (0.5 + 0.3 * unit(rng));
        const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
        child.heading = b.heading + side * (0.45 + 0.6 * unit(rng));
        if (child.diameter >= cfg.diameter_min) pending.push_back(child);
        b.diameter *= 0.9;
        b.heading -= side * 0.15;
      }
    }
  }
  return segments;
}

}  // namespace

ImagePlane illumination_field(const PhantomConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x5A5A5A5AULL));
  std::uniform_int_distribution<int> freq(-cfg.background_max_frequency, cfg.background_max_frequency);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ImagePlane field(cfg.height, cfg.width, 0.0);
  if (cfg.background == 0.0) return field;
  constexpr int kTerms = 5;
  for (int k = 0; k < kTerms; ++k) {
    int fx = 0, fy = 0;
    while (fx == 0 && fy == 0) {
      fx = freq(rng);
      fy = freq(rng);
    }
    const double amp = 0.5 + unit(rng);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        field(y, x) += amp * std::cos(2.0 * std::numbers::pi *
                                          (fx * static_cast<double>(x) / cfg.width +
                                           fy * static_cast<double>(y) / cfg.height) +
                                      phase);
      }
    }
  }
  double peak = 0.0;
  for (double v : field.data) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : field.data) v *= cfg.background / peak;
  }
  return field;
}

LabeledSample generate(const PhantomConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(splitmix64(cfg.seed));
  const std::vector<Segment> segments = grow_trees(cfg, rng);

  const int h = cfg.height, w = cfg.width;
  ImagePlane darkness(h, w, 0.0);
  Grid<double> margin(h, w, std::numeric_limits<double>::infinity());  // dist - r of the best tube
  LabeledSample s;
  s.seed = cfg.seed;
  s.label = BinaryPlane(h, w, 0);
  s.diameter = ImagePlane(h, w, 0.0);

  for (const Segment& g : segments) {
    const double rmax = std::max(g.r0, g.r1);
    const int y_lo = std::max(0, static_cast<int>(std::floor(std::min(g.y0, g.y1) - rmax - 1)));
    const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(std::max(g.y0, g.y1) + rmax + 1)));
    const int x_lo = std::max(0, static_cast<int>(std::floor(std::min(g.x0, g.x1) - rmax - 1)));
    const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(std::max(g.x0, g.x1) + rmax + 1)));
    const double dx = g.x1 - g.x0, dy = g.y1 - g.y0;
    const double len2 = dx * dx + dy * dy;
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        double t = len2 > 0.0 ? ((x - g.x0) * dx + (y - g.y0) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double dist = std::hypot(x - (g.x0 + t * dx), y - (g.y0 + t * dy));
        const double r = g.r0 + t * (g.r1 - g.r0);
        const double coverage = std::clamp(r - dist + 0.5, 0.0, 1.0);
        darkness(y, x) = std::max(darkness(y, x), coverage * g.contrast);
        if (dist <= r) {
          s.label(y, x) = 1;
          if (dist - r < margin(y, x)) {
            margin(y, x) = dist - r;
            s.diameter(y, x) = 2.0 * r;
          }
        }
      }
    }
  }

  const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
  const double radius = cfg.fov_radius * std::min(h, w);
  s.fov = BinaryPlane(h, w, 0);
  const ImagePlane light = illumination_field(cfg);
  std::normal_distribution<double> noise(0.0, 1.0);
  s.image = ImagePlane(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double rho = std::hypot(x - cx, y - cy) / radius;
      s.fov(y, x) = rho <= 1.0 ? 1 : 0;
      const double gain = std::max(0.2, 1.0 - cfg.vignette * rho * rho);
      double v = gain * (cfg.base_intensity + light(y, x) - darkness(y, x));
      if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * noise(rng);
      s.image(y, x) = std::clamp(v, 0.0, 1.0);
    }
  }
  s.weight = weight_map(s.label).weight;
  return s;
}

std::uint64_t suite_seed(std::uint64_t base_seed, int index) {
  return base_seed + static_cast<std::uint64_t>(index);
}

void split_sizes(int n, const SuiteSplit& split, int& n_train, int& n_val) {
  if (n < 6) throw ConfigError("generate_suite: need at least 6 images, got " + std::to_string(n));
  if (split.train <= 0.0 || split.val <= 0.0 || split.train + split.val >= 1.0) {
    throw ConfigError("generate_suite: split fractions must be positive and leave room for test");
  }
  n_train = std::max(1, static_cast<int>(std::lround(split.train * n)));
  n_val = std::max(1, static_cast<int>(std::lround(split.val * n)));
  if (n_train + n_val >= n) throw ConfigError("generate_suite: split leaves no test images");
}

PhantomSuite generate_suite(int n, std::uint64_t base_seed, const PhantomConfig& cfg,
                            const SuiteSplit& split) {
  int n_train = 0, n_val = 0;
  split_sizes(n, split, n_train, n_val);
  PhantomSuite suite;
  for (int i = 0; i < n; ++i) {
    PhantomConfig c = cfg;
    c.seed = suite_seed(base_seed, i);
    auto& dst = i < n_train ? suite.train : (i < n_train + n_val ? suite.val : suite.test);
    dst.push_back(generate(c));
  }
  return suite;
}

}  // namespace vk
