#pragma once

// Frangi vesselness: the scalar response, the classical multi-scale filter and
// Frangi-Net, whose layers are the filter's steps initialized to the classical
// operator (Gaussian second-derivative kernels, beta = 0.5, c = 1.0).

#include <string>
#include <vector>

#include "vesselkit/graph.hpp"
#include "vesselkit/image.hpp"
#include "vesselkit/params.hpp"
#include "vesselkit/scale_space.hpp"

namespace vk {

enum class Polarity { kDarkOnBright, kBrightOnDark };

inline constexpr double kRatioEpsilon = 1e-10;

struct VesselnessParams {
  std::vector<double> beta;
  std::vector<double> c;
  Polarity polarity = Polarity::kDarkOnBright;

  static VesselnessParams defaults(std::size_t scales) {
    return {std::vector<double>(scales, 0.5), std::vector<double>(scales, 1.0),
            Polarity::kDarkOnBright};
  }
};

/// V0 for one pixel. Zero where lambda2 < 0 (dark-on-bright; the sign is
/// flipped for bright-on-dark). Throws ConfigError unless beta, c > 0.
double vesselness(double lambda1, double lambda2, double beta, double c,
                  Polarity polarity = Polarity::kDarkOnBright, double eps_div = kRatioEpsilon);

/// Differentiable V0: eigenvalues (N,2,H,W), beta and c single-element tensors.
/// Returns (N,1,H,W). The polarity gate passes zero gradient.
template <typename T>
Var<T> vesselness(Var<T> eigenvalues, Var<T> beta, Var<T> c,
                  Polarity polarity = Polarity::kDarkOnBright,
                  T eps_div = static_cast<T>(kRatioEpsilon));

struct ClassicalFrangiResult {
  ImagePlane response;              // per-pixel max over scales
  std::vector<ImagePlane> per_scale;
};

/// Classical filter with analytic kernels; no graph is recorded.
ClassicalFrangiResult classical_frangi(const ImagePlane& image, const ScaleBank& bank,
                                       const VesselnessParams& params);

template <typename T>
class FrangiNet {
 public:
  explicit FrangiNet(ScaleBank bank = {}, VesselnessParams init = VesselnessParams::defaults(8),
                     std::string prefix = "frangi.");

  FrangiNet(const FrangiNet&) = delete;
  FrangiNet& operator=(const FrangiNet&) = delete;
  FrangiNet(FrangiNet&&) noexcept = default;
  FrangiNet& operator=(FrangiNet&&) noexcept = default;

  /// Per-scale vesselness stacked as channels, (N,S,H,W); the head is not applied.
  Var<T> scale_responses(Graph<T>& g, Var<T> image) const;
  /// Full network: (N,1,H,W) -> (N,2,H,W) softmax, channel 1 = vessel.
  Var<T> forward(Graph<T>& g, Var<T> image) const;

  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  const ScaleBank& bank() const { return bank_; }
  Polarity polarity() const { return polarity_; }

  ParamBreakdown count_params() const;

 private:
  ScaleBank bank_;
  Polarity polarity_;
  ModelParams<T> params_;
  std::vector<Parameter<T>*> kernels_;
  std::vector<Parameter<T>*> beta_raw_;  // beta = raw^2
  std::vector<Parameter<T>*> c_raw_;     // c = raw^2
  Parameter<T>* head1_w_ = nullptr;
  Parameter<T>* head1_b_ = nullptr;
  Parameter<T>* head2_w_ = nullptr;
  Parameter<T>* head2_b_ = nullptr;
};

extern template class FrangiNet<float>;
extern template class FrangiNet<double>;

}  // namespace vk
