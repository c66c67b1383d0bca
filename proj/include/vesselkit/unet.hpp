#pragma once

// Small encoder-decoder ("U-Net") used either as a segmenter (2-channel
// softmax) or as a preprocessing net (1-channel sigmoid).

#include <cstdint>
#include <string>
#include <vector>

#include "vesselkit/graph.hpp"
#include "vesselkit/params.hpp"

namespace vk {

enum class UNetMode { kSegment, kPreprocess };

struct UNetConfig {
  int levels = 2;
  int init_features = 8;
  UNetMode mode = UNetMode::kSegment;
  bool use_norm = true;
  double norm_momentum = 0.9;
  double norm_epsilon = 1e-5;

  int in_channels() const { return 1; }
  int out_channels() const { return mode == UNetMode::kSegment ? 2 : 1; }
  int divisor() const { return 1 << (levels - 1); }
};

/// Per-channel normalization. In training mode the batch statistics are used
/// and, when running_mean/running_var are given, blended into them with
/// r = momentum r + (1 - momentum) batch (variance unbiased). In inference mode
/// the running statistics are used. x is (N,C,H,W); scale/shift are (1,C,1,1).
template <typename T>
Var<T> norm_layer(Var<T> x, Var<T> scale, Var<T> shift, bool training, Tensor<T>* running_mean,
                  Tensor<T>* running_var, double momentum = 0.9, double epsilon = 1e-5);

template <typename T>
class UNet {
 public:
  explicit UNet(UNetConfig cfg = {}, std::uint64_t seed = 1, std::string prefix = "unet.");

  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;
  UNet(UNet&&) noexcept = default;
  UNet& operator=(UNet&&) noexcept = default;

  /// (N,1,H,W) -> (N,2,H,W) softmax or (N,1,H,W) sigmoid. Sizes not divisible
  /// by 2^(levels-1) are mirror-padded and the output is cropped back.
  Var<T> forward(Graph<T>& g, Var<T> x) const { return forward(g, x, training_); }
  Var<T> forward(Graph<T>& g, Var<T> x, bool training) const;

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  const UNetConfig& config() const { return cfg_; }

  ParamBreakdown count_params() const;

 private:
  struct ConvBlock {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;
    Parameter<T>* scale = nullptr;
    Parameter<T>* shift = nullptr;
    Parameter<T>* running_mean = nullptr;
    Parameter<T>* running_var = nullptr;
  };

  Var<T> conv_norm_relu(Graph<T>& g, Var<T> x, const ConvBlock& b, bool training) const;
  Var<T> conv(Graph<T>& g, Var<T> x, const ConvBlock& b) const;

  UNetConfig cfg_;
  ModelParams<T> params_;
  std::vector<std::vector<ConvBlock>> encoder_;  // two 3x3 blocks per level
  std::vector<ConvBlock> up_;                    // 1x1 after upsampling, per decoder level
  std::vector<std::vector<ConvBlock>> decoder_;  // two 3x3 blocks per decoder level
  ConvBlock head_;
  bool training_ = true;
};

/// Closed-form trainable parameter count for a configuration.
ParamBreakdown count_unet_params(const UNetConfig& cfg);

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace vk
