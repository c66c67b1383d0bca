#pragma once

// Data preparation: green-channel extraction, CLAHE, FOV erosion and the
// thin-vessel weight map w = 1 / (alpha * d).

#include <cstdint>
#include <vector>

#include "vesselkit/image.hpp"

namespace vk {

/// Interleaved 8-bit image.
struct ColorImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;
};

/// Channel 1 scaled to [0,1]. Throws ConfigError unless the image has 3 channels.
ImagePlane extract_green(const ColorImage& rgb);

struct ClaheConfig {
  int tiles_x = 8;
  int tiles_y = 8;
  double clip_limit = 2.0;  // multiple of the uniform bin height
  int bins = 256;
};

ImagePlane clahe(const ImagePlane& image, const ClaheConfig& cfg = {});

struct DistanceField {
  Grid<double> distance;  // Euclidean distance to the nearest feature pixel
  Grid<int> nearest;      // linear index of that feature pixel, -1 if none
};

/// Exact Euclidean distance transform to the pixels where features != 0.
/// With outside_is_feature the one-pixel ring around the image counts as
/// feature (nearest is -1 for pixels closest to it).
DistanceField distance_transform(const BinaryPlane& features, bool outside_is_feature = false);

/// Erosion by a disc of the given radius: keeps pixels whose distance to the
/// nearest unset pixel (the outside counts as unset) exceeds `pixels`.
BinaryPlane erode_fov(const BinaryPlane& mask, int pixels = 4);

struct WeightMap {
  ImagePlane weight;
  ImagePlane diameter;  // 0 off-vessel
};

/// d = diameter of the largest inscribed disc covering the pixel (twice the
/// distance-to-background at the disc centre), clamped to >= 1;
/// w = 1 / (alpha d) on vessel pixels and background_weight elsewhere.
WeightMap weight_map(const BinaryPlane& label, double alpha = 0.18, double background_weight = 1.0);

}  // namespace vk
