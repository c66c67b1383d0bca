#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "vesselkit/graph.hpp"
#include "vesselkit/image.hpp"

namespace vk::testing {

inline Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline ImagePlane random_plane(int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ImagePlane p(h, w);
  for (auto& v : p.data) v = u(rng);
  return p;
}

/// Central-difference gradient of a scalar function of one tensor.
inline Tensor<double> numeric_gradient(const std::function<double(const Tensor<double>&)>& f, Tensor<double> x,
                                       double step = 1e-6) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double plus = f(x);
    x[i] = orig - step;
    const double minus = f(x);
    x[i] = orig;
    g[i] = (plus - minus) / (2.0 * step);
  }
  return g;
}

inline double max_relative_error(const Tensor<double>& a, const Tensor<double>& n, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::max({std::abs(a[i]), std::abs(n[i]), floor});
    worst = std::max(worst, std::abs(a[i] - n[i]) / d);
  }
  return worst;
}

template <typename T>
std::vector<T> values_of(const Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

inline double max_abs_diff(const ImagePlane& a, const ImagePlane& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  return worst;
}

/// Direct nested-loop cross-correlation with zero padding.
inline Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>* bias,
                                  int stride, int dilation, int padding) {
  const Shape xs = x.shape();
  const Shape ks = k.shape();
  const int oh = (xs.h + 2 * padding - dilation * (ks.h - 1) - 1) / stride + 1;
  const int ow = (xs.w + 2 * padding - dilation * (ks.w - 1) - 1) / stride + 1;
  Tensor<double> out(Shape{xs.n, ks.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int co = 0; co < ks.n; ++co)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = bias ? (*bias)[co] : 0.0;
          for (int ci = 0; ci < ks.c; ++ci)
            for (int ky = 0; ky < ks.h; ++ky)
              for (int kx = 0; kx < ks.w; ++kx) {
                const int iy = y * stride - padding + ky * dilation;
                const int ix = xx * stride - padding + kx * dilation;
                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                acc += x(n, ci, iy, ix) * k(co, ci, ky, kx);
              }
          out(n, co, y, xx) = acc;
        }
  return out;
}

/// Windowed mean over the in-image part of a (2r+1)^2 window.
inline ImagePlane box_mean_oracle(const ImagePlane& p, int r) {
  ImagePlane out(p.height, p.width);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      double acc = 0.0;
      int count = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= p.height || xx >= p.width) continue;
          acc += p(yy, xx);
          ++count;
        }
      out(y, x) = acc / count;
    }
  return out;
}

// Per-window least-squares fit of p on I, then the fits of all windows
// covering a pixel are averaged. Windows are clipped to the image.
inline ImagePlane regression_oracle(const ImagePlane& p, const ImagePlane& guide, int r, double eps) {
  const int h = p.height, w = p.width;
  ImagePlane a(h, w), b(h, w), q(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double si = 0, sp = 0, sii = 0, sip = 0;
      int n = 0;
      for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
        for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
          si += guide(yy, xx);
          sp += p(yy, xx);
          sii += guide(yy, xx) * guide(yy, xx);
          sip += guide(yy, xx) * p(yy, xx);
          ++n;
        }
      const double mi = si / n, mp = sp / n;
      a(y, x) = (sip / n - mi * mp) / (sii / n - mi * mi + eps);
      b(y, x) = mp - a(y, x) * mi;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double sa = 0, sb = 0;
      int n = 0;
      for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
        for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
          sa += a(yy, xx);
          sb += b(yy, xx);
          ++n;
        }
      q(y, x) = sa / n * guide(y, x) + sb / n;
    }
  return q;
}

// Mann-Whitney statistic over all positive/negative pairs, ties count half.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!l[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

inline double f1_at(const std::vector<double>& s, const std::vector<std::uint8_t>& l, double t) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool pos = s[i] >= t;
    tp += pos && l[i];
    fp += pos && !l[i];
    fn += !pos && l[i];
  }
  return 2 * tp + fp + fn > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
}

// Every distinct score as a threshold, plus one above the maximum.
inline double best_f1(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  double best = f1_at(s, l, *std::max_element(s.begin(), s.end()) + 1.0);
  for (const double t : s) best = std::max(best, f1_at(s, l, t));
  return best;
}

// Scored label sets with ties; positives score two quantization levels higher.
struct RandomSet {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

inline RandomSet random_set(std::uint64_t seed, int n, int levels) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> q(0, levels - 1);
  std::bernoulli_distribution pos(0.3);
  RandomSet r;
  for (int i = 0; i < n; ++i) {
    const bool p = pos(rng);
    r.labels.push_back(p);
    r.scores.push_back((q(rng) + (p ? 2 : 0)) / static_cast<double>(levels));
  }
  r.labels[0] = 1;
  r.labels[1] = 0;
  return r;
}

}  // namespace vk::testing
