#pragma once

// Synthetic fundus-like phantoms: dark tapering vessel trees on a bright,
// unevenly lit background inside a circular field of view.

#include <cstdint>
#include <vector>

#include "vesselkit/image.hpp"

namespace vk {

struct PhantomConfig {
  int height = 512;
  int width = 512;
  int n_trees = 7;
  double diameter_min = 1.0;
  double diameter_max = 8.0;
  double taper = 0.996;          // diameter factor per step
  double step = 2.0;             // random-walk step length in px
  double tortuosity = 0.12;      // std of the heading change per step (rad)
  double branch_probability = 0.03;
  double base_intensity = 0.7;
  double background = 0.12;      // amplitude of the low-frequency illumination
  int background_max_frequency = 2;  // cycles per image along each axis
  double vignette = 0.25;        // relative darkening at the FOV border
  double fov_radius = 0.47;      // FOV disc radius as a fraction of min(H, W)
  double contrast_min = 0.2;
  double contrast_max = 0.5;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
};

struct LabeledSample {
  ImagePlane image;
  BinaryPlane label;
  BinaryPlane fov;
  ImagePlane diameter;  // analytic tube diameter on vessel pixels, 0 elsewhere
  ImagePlane weight;    // thin-vessel weight map derived from label
  std::uint64_t seed = 0;
};

/// Additive illumination field in [-background, background], built from a few
/// cosines with integer frequencies up to background_max_frequency.
ImagePlane illumination_field(const PhantomConfig& cfg);

LabeledSample generate(const PhantomConfig& cfg);

struct PhantomSuite {
  std::vector<LabeledSample> train, val, test;
};

struct SuiteSplit {
  double train = 0.4;
  double val = 0.1;
};

/// Seeds used for sample i of a suite.
std::uint64_t suite_seed(std::uint64_t base_seed, int index);
/// Number of train and val samples for n images (the rest is test).
void split_sizes(int n, const SuiteSplit& split, int& n_train, int& n_val);

PhantomSuite generate_suite(int n, std::uint64_t base_seed, const PhantomConfig& cfg = {},
                            const SuiteSplit& split = {});

}  // namespace vk
