#include "vesselkit/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace vk {

ImagePlane extract_green(const ColorImage& rgb) {
  if (rgb.channels != 3) {
    throw ConfigError("extract_green: expected 3 channels, got " + std::to_string(rgb.channels));
  }
  if (rgb.data.size() != static_cast<std::size_t>(rgb.height) * rgb.width * 3) {
    throw ConfigError("extract_green: pixel buffer size does not match dimensions");
  }
  ImagePlane out(rgb.height, rgb.width);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = rgb.data[3 * i + 1] / 255.0;
  return out;
}

namespace {

struct TileSpan {
  int begin;
  int end;
  double center;
};

std::vector<TileSpan> tile_spans(int extent, int tiles) {
  tiles = std::clamp(tiles, 1, extent);
  const int step = extent / tiles;
  std::vector<TileSpan> spans;
  for (int t = 0; t < tiles; ++t) {
    const int b = t * step;
    const int e = t + 1 == tiles ? extent : b + step;
    spans.push_back({b, e, 0.5 * (b + e - 1)});
  }
  return spans;
}

// Bracketing tiles and the weight of the upper one for coordinate c.
void interpolation_weights(const std::vector<TileSpan>& spans, int c, int& lo, int& hi, double& t) {
  if (c <= spans.front().center) {
    lo = hi = 0;
    t = 0.0;
    return;
  }
  if (c >= spans.back().center) {
    lo = hi = static_cast<int>(spans.size()) - 1;
    t = 0.0;
    return;
  }
  hi = 1;
  while (spans[hi].center < c) ++hi;
  lo = hi - 1;
  t = (c - spans[lo].center) / (spans[hi].center - spans[lo].center);
}

}  // namespace

ImagePlane clahe(const ImagePlane& image, const ClaheConfig& cfg) {
  if (!(cfg.clip_limit > 0.0)) throw ConfigError("clahe: clip_limit must be positive");
  if (cfg.bins < 2) throw ConfigError("clahe: need at least 2 bins");
  if (cfg.tiles_x < 1 || cfg.tiles_y < 1) throw ConfigError("clahe: tile counts must be positive");
  if (image.size() == 0) return image;

  const int bins = cfg.bins;
  auto bin_of = [bins](double v) {
    return std::clamp(static_cast<int>(std::clamp(v, 0.0, 1.0) * bins), 0, bins - 1);
  };
  const auto ys = tile_spans(image.height, cfg.tiles_y);
  const auto xs = tile_spans(image.width, cfg.tiles_x);

  // Per-tile mapping; empty lut means identity (uniform tile).
  std::vector<std::vector<double>> luts(ys.size() * xs.size());
  std::vector<double> hist(bins);
  for (std::size_t ty = 0; ty < ys.size(); ++ty) {
    for (std::size_t tx = 0; tx < xs.size(); ++tx) {
      std::fill(hist.begin(), hist.end(), 0.0);
      for (int y = ys[ty].begin; y < ys[ty].end; ++y) {
        for (int x = xs[tx].begin; x < xs[tx].end; ++x) hist[bin_of(image(y, x))] += 1.0;
      }
      const double npix = static_cast<double>(ys[ty].end - ys[ty].begin) * (xs[tx].end - xs[tx].begin);
      if (std::count_if(hist.begin(), hist.end(), [](double h) { return h > 0.0; }) <= 1) continue;
      const double limit = std::max(1.0, cfg.clip_limit * npix / bins);
      double excess = 0.0;
      for (double& h : hist) {
        if (h > limit) {
          excess += h - limit;
          h = limit;
        }
      }
      const double share = excess / bins;
      auto& lut = luts[ty * xs.size() + tx];
      lut.resize(bins);
      double cdf = 0.0;
      for (int b = 0; b < bins; ++b) {
        cdf += hist[b] + share;
        lut[b] = std::min(1.0, cdf / npix);
      }
    }
  }

  ImagePlane out(image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    int y0, y1;
    double wy;
    interpolation_weights(ys, y, y0, y1, wy);
    for (int x = 0; x < image.width; ++x) {
      int x0, x1;
      double wx;
      interpolation_weights(xs, x, x0, x1, wx);
      const double v = image(y, x);
      const int b = bin_of(v);
      auto map = [&](int ty, int tx) {
        const auto& lut = luts[ty * xs.size() + tx];
        return lut.empty() ? std::clamp(v, 0.0, 1.0) : lut[b];
      };
      const double top = (1.0 - wx) * map(y0, x0) + wx * map(y0, x1);
      const double bottom = (1.0 - wx) * map(y1, x0) + wx * map(y1, x1);
      out(y, x) = std::clamp((1.0 - wy) * top + wy * bottom, 0.0, 1.0);
    }
  }
  return out;
}

BinaryPlane erode_fov(const BinaryPlane& mask, int pixels) {
  if (pixels < 0) throw ConfigError("erode_fov: pixels must be non-negative");
  if (pixels == 0) return mask;
  BinaryPlane background(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.size(); ++i) background.data[i] = mask.data[i] ? 0 : 1;
  const DistanceField df = distance_transform(background, true);
  BinaryPlane out(mask.height, mask.width, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    out.data[i] = (mask.data[i] && df.distance.data[i] > pixels) ? 1 : 0;
  }
  return out;
}

WeightMap weight_map(const BinaryPlane& label, double alpha, double background_weight) {
  if (!(alpha > 0.0)) throw ConfigError("weight_map: alpha must be positive");
  WeightMap out{ImagePlane(label.height, label.width, background_weight),
                ImagePlane(label.height, label.width, 0.0)};
  const bool any = std::any_of(label.data.begin(), label.data.end(), [](auto v) { return v != 0; });
  if (!any) {
    std::fill(out.weight.data.begin(), out.weight.data.end(), 1.0);
    return out;
  }
  BinaryPlane background(label.height, label.width);
  for (std::size_t i = 0; i < label.size(); ++i) background.data[i] = label.data[i] ? 0 : 1;
  const DistanceField to_background = distance_transform(background, false);
  // Local thickness: each vessel pixel takes the diameter of the largest
  // inscribed disc covering it. Such discs are centred on the medial axis.
  const Grid<double>& r = to_background.distance;
  const int h = label.height, w = label.width;
  for (int qy = 0; qy < h; ++qy) {
    for (int qx = 0; qx < w; ++qx) {
      if (!label(qy, qx)) continue;
      const double rq = r(qy, qx);
      if (!std::isfinite(rq)) continue;
      const int reach = static_cast<int>(std::ceil(rq));
      for (int y = std::max(0, qy - reach + 1); y <= std::min(h - 1, qy + reach - 1); ++y) {
        for (int x = std::max(0, qx - reach + 1); x <= std::min(w - 1, qx + reach - 1); ++x) {
          const double dy = y - qy, dx = x - qx;
          if (dy * dy + dx * dx < rq * rq) out.diameter(y, x) = std::max(out.diameter(y, x), 2.0 * rq);
        }
      }
    }
  }
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (!label.data[i]) continue;
    const double d = std::max(1.0, out.diameter.data[i]);
    out.diameter.data[i] = d;
    out.weight.data[i] = 1.0 / (alpha * d);
  }
  return out;
}

}  // namespace vk
