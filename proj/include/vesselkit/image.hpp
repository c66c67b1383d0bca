#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vesselkit/tensor.hpp"

namespace vk {

/// Row-major single-channel raster.
template <typename V>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<V> data;

  Grid() = default;
  Grid(int h, int w, V fill = V{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return data.size(); }
  V& operator()(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  const V& operator()(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(int h, int w) const { return height == h && width == w; }
  template <typename U>
  bool same_shape(const Grid<U>& o) const {
    return height == o.height && width == o.width;
  }
  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Intensity plane, nominally in [0,1].
using ImagePlane = Grid<double>;
/// 0/1 plane (labels, masks).
using BinaryPlane = Grid<std::uint8_t>;

template <typename T, typename V>
Tensor<T> to_tensor(const Grid<V>& g) {
  Tensor<T> t(Shape{1, 1, g.height, g.width});
  for (std::size_t i = 0; i < g.size(); ++i) t[i] = static_cast<T>(g.data[i]);
  return t;
}

template <typename T>
ImagePlane plane_from_tensor(const Tensor<T>& t, int n = 0, int c = 0) {
  ImagePlane p(t.shape().h, t.shape().w);
  const auto src = t.plane(n, c);
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = static_cast<double>(src[i]);
  return p;
}

inline void require_same_shape(const char* what, int h0, int w0, int h1, int w1) {
  if (h0 != h1 || w0 != w1) {
    throw ConfigError(std::string(what) + ": shape mismatch " + std::to_string(h0) + "x" +
                      std::to_string(w0) + " vs " + std::to_string(h1) + "x" + std::to_string(w1));
  }
}

}  // namespace vk
