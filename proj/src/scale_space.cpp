#include "vesselkit/scale_space.hpp"

#include <cmath>
#include <numbers>

#include "vesselkit/ops.hpp"

namespace vk {

int KernelSizeRule::size(double sigma) const {
  const int half = static_cast<int>(std::ceil(sigmas_per_side * sigma));
  return std::max(3, 2 * half + 1);
}

SecondDerivativeKernels gaussian_second_derivative_kernels(double sigma, const KernelSizeRule& rule,
                                                           bool gamma_normalize) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian kernel: sigma must be positive");
  const int size = rule.size(sigma);
  const int r = size / 2;
  SecondDerivativeKernels k{size, ImagePlane(size, size), ImagePlane(size, size),
                            ImagePlane(size, size)};
  const double s2 = sigma * sigma;
  const double s4 = s2 * s2;
  const double norm = 1.0 / (2.0 * std::numbers::pi * s2);
  for (int ky = 0; ky < size; ++ky) {
    const double y = ky - r;
    for (int kx = 0; kx < size; ++kx) {
      const double x = kx - r;
      const double g = norm * std::exp(-(x * x + y * y) / (2.0 * s2));
      k.gxx(ky, kx) = (x * x / s4 - 1.0 / s2) * g;
      k.gxy(ky, kx) = x * y / s4 * g;
      k.gyy(ky, kx) = (y * y / s4 - 1.0 / s2) * g;
    }
  }
  for (ImagePlane* p : {&k.gxx, &k.gyy}) {
    double m = 0.0;
    for (double v : p->data) m += v;
    m /= static_cast<double>(p->size());
    for (double& v : p->data) v -= m;
  }
  if (gamma_normalize) {
    for (ImagePlane* p : {&k.gxx, &k.gxy, &k.gyy}) {
      for (double& v : p->data) v *= s2;
    }
  }
  return k;
}

template <typename T>
Tensor<T> hessian_kernel_tensor(const SecondDerivativeKernels& k) {
  Tensor<T> t(Shape{3, 1, k.size, k.size});
  const ImagePlane* planes[3] = {&k.gxx, &k.gxy, &k.gyy};
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < planes[c]->size(); ++i) {
      t[c * planes[c]->size() + i] = static_cast<T>(planes[c]->data[i]);
    }
  }
  return t;
}

ImagePlane correlate_same(const ImagePlane& image, const ImagePlane& kernel) {
  if (kernel.height % 2 == 0 || kernel.width % 2 == 0) {
    throw ConfigError("correlate_same: kernel size must be odd");
  }
  const int ry = kernel.height / 2;
  const int rx = kernel.width / 2;
  ImagePlane out(image.height, image.width, 0.0);
  for (int ky = 0; ky < kernel.height; ++ky) {
    for (int kx = 0; kx < kernel.width; ++kx) {
      const double w = kernel(ky, kx);
      const int dy = ky - ry;
      const int dx = kx - rx;
      const int x0 = std::max(0, -dx);
      const int x1 = std::min(image.width, image.width - dx);
      for (int y = std::max(0, -dy); y < std::min(image.height, image.height - dy); ++y) {
        double* orow = &out(y, 0);
        const double* irow = &image(y + dy, 0);
        for (int x = x0; x < x1; ++x) orow[x] += w * irow[x + dx];
      }
    }
  }
  return out;
}

HessianField hessian(const ImagePlane& image, const SecondDerivativeKernels& kernels) {
  return {correlate_same(image, kernels.gxx), correlate_same(image, kernels.gxy),
          correlate_same(image, kernels.gyy)};
}

HessianField hessian(const ImagePlane& image, double sigma, const KernelSizeRule& rule,
                     bool gamma_normalize) {
  return hessian(image, gaussian_second_derivative_kernels(sigma, rule, gamma_normalize));
}

template <typename T>
Var<T> hessian(Var<T> image, Var<T> kernel) {
  if (image.shape().c != 1) throw ConfigError("hessian: image must be single-channel");
  if (kernel.shape().n != 3) throw ConfigError("hessian: kernel must have 3 output channels");
  return conv2d<T>(image, kernel, std::nullopt, ConvOptions::same(kernel.shape().h));
}

namespace {

// Returns (lambda1, lambda2, swapped) where swapped means lambda1 = m - d.
template <typename T>
inline void eigen_core(T a, T b, T c, T eps, T& l1, T& l2, T& d, bool& swapped) {
  const T m = (a + c) / T{2};
  const T q = (a - c) / T{2};
  d = std::sqrt(q * q + b * b + eps);
  const T la = m + d;
  const T lb = m - d;
  swapped = std::abs(la) > std::abs(lb);
  l1 = swapped ? lb : la;
  l2 = swapped ? la : lb;
}

}  // namespace

std::pair<double, double> eig2x2_sym(double hxx, double hxy, double hyy, double eps) {
  double l1, l2, d;
  bool swapped;
  eigen_core(hxx, hxy, hyy, eps, l1, l2, d, swapped);
  return {l1, l2};
}

EigenPlanes eig2x2_sym(const HessianField& h, double eps) {
  require_same_shape("eig2x2_sym", h.hxx.height, h.hxx.width, h.hxy.height, h.hxy.width);
  require_same_shape("eig2x2_sym", h.hxx.height, h.hxx.width, h.hyy.height, h.hyy.width);
  EigenPlanes e{ImagePlane(h.hxx.height, h.hxx.width), ImagePlane(h.hxx.height, h.hxx.width)};
  for (std::size_t i = 0; i < h.hxx.size(); ++i) {
    const auto [l1, l2] = eig2x2_sym(h.hxx.data[i], h.hxy.data[i], h.hyy.data[i], eps);
    e.lambda1.data[i] = l1;
    e.lambda2.data[i] = l2;
  }
  return e;
}

template <typename T>
Var<T> eig2x2_sym(Var<T> hessian_stack, T eps) {
  const Shape s = hessian_stack.shape();
  if (s.c != 3) throw ConfigError("eig2x2_sym: expected 3 Hessian channels, got " + s.str());
  Graph<T>& g = *hessian_stack.graph();
  const Tensor<T>& h = hessian_stack.value();
  Tensor<T> out(Shape{s.n, 2, s.h, s.w});
  const std::size_t plane = s.plane_size();
  std::uint64_t branches = 1;
  for (int n = 0; n < s.n; ++n) {
    const T* a = h.data() + h.index(n, 0, 0, 0);
    const T* b = a + plane;
    const T* c = b + plane;
    T* l1 = out.data() + out.index(n, 0, 0, 0);
    T* l2 = l1 + plane;
    for (std::size_t p = 0; p < plane; ++p) {
      T d;
      bool swapped;
      eigen_core(a[p], b[p], c[p], eps, l1[p], l2[p], d, swapped);
      if (g.track_branches()) branches = mix_branch(branches, swapped ? 1 : 2);
    }
  }
  return g.record(
      "eig2x2_sym", {hessian_stack}, std::move(out),
      [s, eps](BackwardContext<T>& ctx) {
        const std::size_t plane = s.plane_size();
        const Tensor<T>& h = *ctx.inputs[0];
        Tensor<T>& gh = *ctx.input_grads[0];
        for (int n = 0; n < s.n; ++n) {
          const std::size_t hi = h.index(n, 0, 0, 0);
          const std::size_t oi = ctx.grad_output.index(n, 0, 0, 0);
          for (std::size_t p = 0; p < plane; ++p) {
            const T a = h[hi + p], b = h[hi + plane + p], c = h[hi + 2 * plane + p];
            T l1, l2, d;
            bool swapped;
            eigen_core(a, b, c, eps, l1, l2, d, swapped);
            // lambda_plus = m + d, lambda_minus = m - d.
            const T g1 = ctx.grad_output[oi + p];
            const T g2 = ctx.grad_output[oi + plane + p];
            const T g_plus = swapped ? g2 : g1;
            const T g_minus = swapped ? g1 : g2;
            const T gm = g_plus + g_minus;
            const T gd = g_plus - g_minus;
            const T q = (a - c) / T{2};
            // dm/da = dm/dc = 1/2; dd/da = q/(2d), dd/dc = -q/(2d), dd/db = b/d.
            gh[hi + p] += gm / T{2} + gd * q / (T{2} * d);
            gh[hi + plane + p] += gd * b / d;
            gh[hi + 2 * plane + p] += gm / T{2} - gd * q / (T{2} * d);
          }
        }
      },
      g.track_branches() ? branches : 0);
}

template Tensor<float> hessian_kernel_tensor<float>(const SecondDerivativeKernels&);
template Tensor<double> hessian_kernel_tensor<double>(const SecondDerivativeKernels&);
template Var<float> hessian(Var<float>, Var<float>);
template Var<double> hessian(Var<double>, Var<double>);
template Var<float> eig2x2_sym(Var<float>, float);
template Var<double> eig2x2_sym(Var<double>, double);

}  // namespace vk
