#pragma once

// Guided filter (local linear model) and the trainable guided filter block:
// a context aggregation network (CAN) produces the guidance map, a small
// feature extractor produces the filtered input.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vesselkit/graph.hpp"
#include "vesselkit/image.hpp"
#include "vesselkit/params.hpp"

namespace vk {

struct GuidedFilterConfig {
  int radius = 2;
  double epsilon = 1e-2;
};

/// q = mean(a) * I + mean(b) with a = cov(I,p) / (var(I) + eps), b = mean(p) - a mean(I),
/// all means over (2r+1)^2 windows. p and I are (N,1,H,W).
template <typename T>
Var<T> guided_filter(Var<T> p, Var<T> guide, const GuidedFilterConfig& cfg);

/// Non-differentiable convenience wrapper in double precision.
ImagePlane guided_filter(const ImagePlane& p, const ImagePlane& guide,
                         const GuidedFilterConfig& cfg);

struct CanConfig {
  int width = 10;
  std::array<int, 5> dilations{1, 2, 4, 8, 1};
  double slope = 0.2;

  /// Side of the square receptive field.
  int receptive_field() const {
    int r = 0;
    for (int d : dilations) r += d;
    return 2 * r + 1;
  }
};

struct GuidedFilterLayerConfig {
  CanConfig can{};
  int extractor_width = 5;
  double extractor_slope = 0.2;
  GuidedFilterConfig filter{};
};

template <typename T>
class GuidedFilterLayer {
 public:
  /// CAN weights are He-initialized from seed; the extractor starts as an
  /// identity pass-through on its first feature plus small random weights.
  explicit GuidedFilterLayer(GuidedFilterLayerConfig cfg = {}, std::uint64_t seed = 1,
                             std::string prefix = "gf.");

  GuidedFilterLayer(const GuidedFilterLayer&) = delete;
  GuidedFilterLayer& operator=(const GuidedFilterLayer&) = delete;
  GuidedFilterLayer(GuidedFilterLayer&&) noexcept = default;
  GuidedFilterLayer& operator=(GuidedFilterLayer&&) noexcept = default;

  Var<T> can_forward(Graph<T>& g, Var<T> p) const;
  Var<T> extract(Graph<T>& g, Var<T> p) const;
  Var<T> forward(Graph<T>& g, Var<T> p) const;

  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  const GuidedFilterLayerConfig& config() const { return cfg_; }

  ParamBreakdown count_params() const;

  /// Test hook: zero all CAN weights and set the extractor to an exact identity.
  void set_flat_guidance(T guidance_bias);

 private:
  struct ConvLayer {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;
    Parameter<T>* norm_scale = nullptr;  // null for the output layer
    Parameter<T>* norm_shift = nullptr;
    int dilation = 1;
  };

  GuidedFilterLayerConfig cfg_;
  ModelParams<T> params_;
  std::vector<ConvLayer> can_;
  std::vector<ConvLayer> extractor_;
};

extern template class GuidedFilterLayer<float>;
extern template class GuidedFilterLayer<double>;

}  // namespace vk
