#pragma once

// Gaussian second-derivative kernels, Hessians at a scale, and the closed-form
// eigendecomposition of the symmetric 2x2 Hessian.

#include <utility>
#include <vector>

#include "vesselkit/graph.hpp"
#include "vesselkit/image.hpp"

namespace vk {

/// Odd kernel size 2*ceil(k*sigma)+1, at least 3.
struct KernelSizeRule {
  double sigmas_per_side = 3.0;

  int size(double sigma) const;
};

struct ScaleBank {
  std::vector<double> sigmas{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
  KernelSizeRule size_rule{};
  /// Multiply second derivatives by sigma^2.
  bool gamma_normalize = true;
};

struct SecondDerivativeKernels {
  int size = 0;
  ImagePlane gxx, gxy, gyy;  // indexed (ky, kx) with the center at size/2
};

/// Samples d2G/dx2, d2G/dxdy, d2G/dy2 on an odd grid; gxx and gyy are
/// mean-subtracted so they sum to zero. Throws ConfigError for sigma <= 0.
SecondDerivativeKernels gaussian_second_derivative_kernels(double sigma, const KernelSizeRule& rule,
                                                           bool gamma_normalize);

/// Packs (gxx, gxy, gyy) as a (3,1,k,k) convolution kernel.
template <typename T>
Tensor<T> hessian_kernel_tensor(const SecondDerivativeKernels& k);

struct HessianField {
  ImagePlane hxx, hxy, hyy;
};

/// Zero-padded cross-correlation keeping the image size (direct loops).
ImagePlane correlate_same(const ImagePlane& image, const ImagePlane& kernel);

HessianField hessian(const ImagePlane& image, const SecondDerivativeKernels& kernels);
HessianField hessian(const ImagePlane& image, double sigma, const KernelSizeRule& rule = {},
                     bool gamma_normalize = true);

/// Trainable variant: image (N,1,H,W) with a (3,1,k,k) kernel -> (N,3,H,W)
/// holding hxx, hxy, hyy.
template <typename T>
Var<T> hessian(Var<T> image, Var<T> kernel);

inline constexpr double kEigenEpsilon = 1e-12;

/// Eigenvalues of [[hxx,hxy],[hxy,hyy]] ordered so |first| <= |second|.
/// eps is added under the square root of the discriminant.
std::pair<double, double> eig2x2_sym(double hxx, double hxy, double hyy,
                                     double eps = kEigenEpsilon);

struct EigenPlanes {
  ImagePlane lambda1, lambda2;
};

EigenPlanes eig2x2_sym(const HessianField& h, double eps = kEigenEpsilon);

/// Differentiable version: (N,3,H,W) Hessian stack -> (N,2,H,W) with
/// channel 0 = lambda1 (smaller magnitude) and channel 1 = lambda2.
template <typename T>
Var<T> eig2x2_sym(Var<T> hessian_stack, T eps = static_cast<T>(kEigenEpsilon));

}  // namespace vk
