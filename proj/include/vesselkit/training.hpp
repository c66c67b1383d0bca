#pragma once

// Loss terms, the Adam optimizer, patch sampling and augmentation.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "vesselkit/graph.hpp"
#include "vesselkit/image.hpp"
#include "vesselkit/params.hpp"
#include "vesselkit/phantom.hpp"

namespace vk {

enum class ClassBalance { kAutoFromBatch, kFixed };

struct LossConfig {
  double gamma = 2.0;
  double lambda_w = 0.2;
  double lambda_s = 0.1;
  bool use_rw = true;
  bool use_rs = false;
  ClassBalance balance = ClassBalance::kAutoFromBatch;
  double pos_weight = 1.0;  // kFixed only
  double neg_weight = 1.0;
  double log_epsilon = 1e-12;

  void validate() const;
};

/// Class weights {background, vessel}. Auto mode: alpha_c = M / (2 n_c) over
/// the pixels with nonzero weight (M of them), so the pixel-mean of alpha is 1;
/// a class that is absent leaves the other at 1.
template <typename T>
std::array<double, 2> class_weights(const Tensor<T>& labels, const Tensor<T>& weight,
                                    const LossConfig& cfg);

/// Mean over all pixels of -alpha_t w (1 - p_t)^gamma log(p_t + eps), with p_t the
/// probability of the true class. probs is (N,2,H,W) (channel 1 = vessel);
/// labels and weight are (N,1,H,W).
template <typename T>
Var<T> focal_loss(Var<T> probs, const Tensor<T>& labels, const Tensor<T>& weight,
                  const LossConfig& cfg);

/// Mean of squared values over the regularized (convolution weight) tensors.
template <typename T>
Var<T> weight_regularizer(Graph<T>& g, const std::vector<Parameter<T>*>& params);

template <typename T>
struct LossTerms {
  Var<T> total;
  double focal = 0.0;
  double reg_w = 0.0;  // unscaled
  double reg_s = 0.0;  // unscaled
};

/// focal + lambda_w R_w + lambda_s R_s. R_w is skipped unless use_rw; R_s is
/// the MSE between prep_in and prep_out and is skipped unless use_rs.
template <typename T>
LossTerms<T> total_loss(Var<T> probs, const Tensor<T>& labels, const Tensor<T>& weight,
                        const std::vector<Parameter<T>*>& params, std::optional<Var<T>> prep_in,
                        std::optional<Var<T>> prep_out, const LossConfig& cfg);

struct OptimizerConfig {
  double lr0 = 5e-5;
  double decay = 0.9999;  // per step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct OptimizerState {
  OptimizerConfig cfg;
  std::int64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  double learning_rate() const;
};

/// One Adam update with bias correction at lr = lr0 decay^step over the
/// trainable parameters. Moments are created on the first call.
template <typename T>
void adam_step(OptimizerState<T>& state, const std::vector<Parameter<T>*>& params);

struct Patch {
  ImagePlane image;
  BinaryPlane label;
  ImagePlane weight;
  BinaryPlane fov;
  int top = 0;
  int left = 0;
};

/// Mirror-pads (reflect-101, repeated as needed) a plane to at least the given size.
template <typename V>
Grid<V> mirror_pad_to(const Grid<V>& g, int min_height, int min_width);

/// Uniform random top-left corners; images smaller than size are mirror-padded.
std::vector<Patch> sample_patches(const LabeledSample& sample, int size, int count, std::mt19937_64& rng);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double draw(std::mt19937_64& rng) const;
};

struct AugmentSpec {
  Range rotation_deg{-20.0, 20.0};
  Range shear{-0.1, 0.1};
  double noise_sigma = 0.01;
  Range intensity_shift{-0.05, 0.05};

  static AugmentSpec none() { return {{0, 0}, {0, 0}, 0.0, {0, 0}}; }
};

/// Rotation and shear about the patch center (bilinear image and weight,
/// nearest label and fov, mirror border), then additive noise and intensity
/// shift on the image only, clamped to [0,1].
void augment(std::vector<Patch>& batch, const AugmentSpec& spec, std::mt19937_64& rng);

/// Stacks patches into (N,1,S,S) tensors.
template <typename T>
struct BatchTensors {
  Tensor<T> image, label, weight;
};

/// weight = weight map x fov.
template <typename T>
BatchTensors<T> stack_batch(const std::vector<Patch>& batch);

}  // namespace vk
