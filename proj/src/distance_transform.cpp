#include <cmath>
#include <limits>

#include "vesselkit/preprocess.hpp"

namespace vk {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher). f[q] = inf marks
// positions without a parabola. Writes squared distance and argmin.
void squared_distance_1d(const std::vector<double>& f, std::vector<double>& d,
                         std::vector<int>& arg, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    auto intersect = [&](int p) {
      return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
             (2.0 * (q - p));
    };
    double s = intersect(v[k]);
    while (s <= z[k]) {  // z[0] = -inf terminates the loop
      --k;
      s = intersect(v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  d.assign(n, kInf);
  arg.assign(n, -1);
  if (k < 0) return;
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
    arg[q] = v[j];
  }
}

}  // namespace

DistanceField distance_transform(const BinaryPlane& features, bool outside_is_feature) {
  const int pad = outside_is_feature ? 1 : 0;
  const int h = features.height + 2 * pad;
  const int w = features.width + 2 * pad;
  auto is_feature = [&](int y, int x) {
    const int fy = y - pad, fx = x - pad;
    if (fy < 0 || fx < 0 || fy >= features.height || fx >= features.width) return true;
    return features(fy, fx) != 0;
  };

  // Columns: squared distance to the nearest feature in the same column.
  Grid<double> col_d(h, w);
  Grid<int> col_arg(h, w);
  std::vector<double> f(h), d;
  std::vector<int> arg, v;
  std::vector<double> z;
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = is_feature(y, x) ? 0.0 : kInf;
    squared_distance_1d(f, d, arg, v, z);
    for (int y = 0; y < h; ++y) {
      col_d(y, x) = d[y];
      col_arg(y, x) = arg[y];
    }
  }
  // Rows over the column results.
  DistanceField out{Grid<double>(features.height, features.width, kInf),
                    Grid<int>(features.height, features.width, -1)};
  f.assign(w, 0.0);
  for (int y = pad; y < h - pad; ++y) {
    for (int x = 0; x < w; ++x) f[x] = col_d(y, x);
    squared_distance_1d(f, d, arg, v, z);
    for (int x = pad; x < w - pad; ++x) {
      out.distance(y - pad, x - pad) = std::sqrt(d[x]);
      if (arg[x] < 0) continue;
      const int fy = col_arg(y, arg[x]) - pad;
      const int fx = arg[x] - pad;
      if (fy >= 0 && fx >= 0 && fy < features.height && fx < features.width) {
        out.nearest(y - pad, x - pad) = fy * features.width + fx;
      }
    }
  }
  return out;
}

}  // namespace vk
