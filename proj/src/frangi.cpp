#include "vesselkit/frangi.hpp"

#include <cmath>

#include "vesselkit/ops.hpp"

namespace vk {
namespace {

template <typename T>
struct VesselTerms {
  T v;        // V0
  T a;        // exp(-R^2 / 2 beta^2)
  T e;        // exp(-S^2 / 2 c^2)
  T r;        // R_B
  T s2;       // S^2
  bool gated; // V0 forced to 0
};

template <typename T>
inline VesselTerms<T> vessel_terms(T l1, T l2, T beta, T c, Polarity polarity, T eps_div) {
  if (polarity == Polarity::kBrightOnDark) {
    l1 = -l1;
    l2 = -l2;
  }
  VesselTerms<T> t{};
  if (l2 < T{0}) {
    t.gated = true;
    return t;
  }
  t.r = std::abs(l1) / (std::abs(l2) + eps_div);
  t.s2 = l1 * l1 + l2 * l2;
  t.a = std::exp(-t.r * t.r / (T{2} * beta * beta));
  t.e = std::exp(-t.s2 / (T{2} * c * c));
  t.v = t.a * (T{1} - t.e);
  return t;
}

void require_positive(double beta, double c) {
  if (!(beta > 0.0) || !(c > 0.0)) {
    throw ConfigError("vesselness: beta and c must be positive (beta=" + std::to_string(beta) +
                      ", c=" + std::to_string(c) + ")");
  }
}

}  // namespace

double vesselness(double lambda1, double lambda2, double beta, double c, Polarity polarity,
                  double eps_div) {
  require_positive(beta, c);
  return vessel_terms(lambda1, lambda2, beta, c, polarity, eps_div).v;
}

template <typename T>
Var<T> vesselness(Var<T> eigenvalues, Var<T> beta, Var<T> c, Polarity polarity, T eps_div) {
  const Shape s = eigenvalues.shape();
  if (s.c != 2) throw ConfigError("vesselness: expected 2 eigenvalue channels, got " + s.str());
  if (beta.value().size() != 1 || c.value().size() != 1) {
    throw ConfigError("vesselness: beta and c must be single values");
  }
  Graph<T>& g = *eigenvalues.graph();
  const T bv = beta.value()[0];
  const T cv = c.value()[0];
  require_positive(bv, cv);
  const Tensor<T>& lam = eigenvalues.value();
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  const std::size_t plane = s.plane_size();
  std::uint64_t branches = 1;
  for (int n = 0; n < s.n; ++n) {
    const T* l1 = lam.data() + lam.index(n, 0, 0, 0);
    const T* l2 = l1 + plane;
    T* o = out.data() + out.index(n, 0, 0, 0);
    for (std::size_t p = 0; p < plane; ++p) {
      const auto t = vessel_terms(l1[p], l2[p], bv, cv, polarity, eps_div);
      o[p] = t.v;
      if (g.track_branches()) branches = mix_branch(branches, t.gated ? 1 : 2);
    }
  }
  return g.record(
      "vesselness", {eigenvalues, beta, c}, std::move(out),
      [s, polarity, eps_div](BackwardContext<T>& ctx) {
        const std::size_t plane = s.plane_size();
        const Tensor<T>& lam = *ctx.inputs[0];
        const T beta = (*ctx.inputs[1])[0];
        const T c = (*ctx.inputs[2])[0];
        const T sign = polarity == Polarity::kBrightOnDark ? T{-1} : T{1};
        T g_beta{0}, g_c{0};
        for (int n = 0; n < s.n; ++n) {
          const std::size_t li = lam.index(n, 0, 0, 0);
          const std::size_t oi = ctx.grad_output.index(n, 0, 0, 0);
          for (std::size_t p = 0; p < plane; ++p) {
            const T go = ctx.grad_output[oi + p];
            if (go == T{0}) continue;
            const auto t = vessel_terms(lam[li + p], lam[li + plane + p], beta, c, polarity, eps_div);
            if (t.gated) continue;
            const T l1 = sign * lam[li + p];
            const T l2 = sign * lam[li + plane + p];
            const T b = T{1} - t.e;
            const T denom = std::abs(l2) + eps_div;
            // dV/dR and dV/dS^2
            const T dv_dr = -t.a * b * t.r / (beta * beta);
            const T dv_ds2 = t.a * t.e / (T{2} * c * c);
            const T sgn1 = l1 < T{0} ? T{-1} : T{1};
            const T dr_dl1 = sgn1 / denom;
            const T dr_dl2 = -std::abs(l1) / (denom * denom);  // l2 >= 0 inside the gate
            if (ctx.input_grads[0]) {
              Tensor<T>& gl = *ctx.input_grads[0];
              gl[li + p] += sign * go * (dv_dr * dr_dl1 + dv_ds2 * T{2} * l1);
              gl[li + plane + p] += sign * go * (dv_dr * dr_dl2 + dv_ds2 * T{2} * l2);
            }
            g_beta += go * t.a * b * t.r * t.r / (beta * beta * beta);
            g_c += go * (-t.a * t.e * t.s2 / (c * c * c));
          }
        }
        if (ctx.input_grads[1]) (*ctx.input_grads[1])[0] += g_beta;
        if (ctx.input_grads[2]) (*ctx.input_grads[2])[0] += g_c;
      },
      g.track_branches() ? branches : 0);
}

ClassicalFrangiResult classical_frangi(const ImagePlane& image, const ScaleBank& bank,
                                       const VesselnessParams& params) {
  if (params.beta.size() != bank.sigmas.size() || params.c.size() != bank.sigmas.size()) {
    throw ConfigError("classical_frangi: need one beta and c per scale");
  }
  ClassicalFrangiResult result{ImagePlane(image.height, image.width, 0.0), {}};
  for (std::size_t si = 0; si < bank.sigmas.size(); ++si) {
    const auto kernels =
        gaussian_second_derivative_kernels(bank.sigmas[si], bank.size_rule, bank.gamma_normalize);
    const HessianField h = hessian(image, kernels);
    const EigenPlanes e = eig2x2_sym(h);
    ImagePlane v(image.height, image.width);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v.data[i] = vesselness(e.lambda1.data[i], e.lambda2.data[i], params.beta[si], params.c[si],
                             params.polarity);
      result.response.data[i] = si == 0 ? v.data[i] : std::max(result.response.data[i], v.data[i]);
    }
    result.per_scale.push_back(std::move(v));
  }
  return result;
}

template <typename T>
FrangiNet<T>::FrangiNet(ScaleBank bank, VesselnessParams init, std::string prefix)
    : bank_(std::move(bank)), polarity_(init.polarity) {
  const std::size_t scales = bank_.sigmas.size();
  if (scales == 0) throw ConfigError("FrangiNet: empty scale bank");
  if (init.beta.size() != scales || init.c.size() != scales) {
    throw ConfigError("FrangiNet: need one beta and c per scale");
  }
  for (std::size_t si = 0; si < scales; ++si) {
    require_positive(init.beta[si], init.c[si]);
    const auto k =
        gaussian_second_derivative_kernels(bank_.sigmas[si], bank_.size_rule, bank_.gamma_normalize);
    const std::string tag = prefix + "scale" + std::to_string(si) + ".";
    kernels_.push_back(
        &params_.add(tag + "hessian_kernel", hessian_kernel_tensor<T>(k), ParamRole::kConvWeight));
    beta_raw_.push_back(&params_.add(tag + "beta_raw",
                                     Tensor<T>::scalar(static_cast<T>(std::sqrt(init.beta[si]))),
                                     ParamRole::kVesselness));
    c_raw_.push_back(&params_.add(tag + "c_raw",
                                  Tensor<T>::scalar(static_cast<T>(std::sqrt(init.c[si]))),
                                  ParamRole::kVesselness));
  }
  const int s = static_cast<int>(scales);
  // Head: identity 1x1 conv, then a vessel logit of gain 4 times the mean
  // response against a constant background logit of 2.
  Tensor<T> w1(Shape{s, s, 1, 1});
  for (int i = 0; i < s; ++i) w1(i, i, 0, 0) = T{1};
  Tensor<T> w2(Shape{2, s, 1, 1});
  for (int i = 0; i < s; ++i) w2(1, i, 0, 0) = static_cast<T>(4.0 / s);
  Tensor<T> b2(Shape{1, 2, 1, 1});
  b2[0] = T{2};
  head1_w_ = &params_.add(prefix + "head1.weight", std::move(w1), ParamRole::kConvWeight);
  head1_b_ = &params_.add(prefix + "head1.bias", Tensor<T>(Shape{1, s, 1, 1}), ParamRole::kBias);
  head2_w_ = &params_.add(prefix + "head2.weight", std::move(w2), ParamRole::kConvWeight);
  head2_b_ = &params_.add(prefix + "head2.bias", std::move(b2), ParamRole::kBias);
}

template <typename T>
Var<T> FrangiNet<T>::scale_responses(Graph<T>& g, Var<T> image) const {
  if (image.shape().c != 1) throw ConfigError("FrangiNet: input must be single-channel");
  std::vector<Var<T>> maps;
  for (std::size_t si = 0; si < kernels_.size(); ++si) {
    // Derivative kernels stay blind to constant images while they train.
    Var<T> kernel = center_planes<T>(g.parameter(*kernels_[si]));
    Var<T> h = hessian<T>(image, kernel);
    Var<T> lam = eig2x2_sym<T>(h);
    Var<T> beta = square<T>(g.parameter(*beta_raw_[si]));
    Var<T> c = square<T>(g.parameter(*c_raw_[si]));
    maps.push_back(vesselness<T>(lam, beta, c, polarity_));
  }
  return concat_channels<T>(maps);
}

template <typename T>
Var<T> FrangiNet<T>::forward(Graph<T>& g, Var<T> image) const {
  Var<T> stack = scale_responses(g, image);
  Var<T> h1 = conv2d<T>(stack, g.parameter(*head1_w_), g.parameter(*head1_b_), ConvOptions{});
  Var<T> logits = conv2d<T>(h1, g.parameter(*head2_w_), g.parameter(*head2_b_), ConvOptions{});
  return softmax_channels<T>(logits);
}

template <typename T>
ParamBreakdown FrangiNet<T>::count_params() const {
  ParamBreakdown b;
  for (std::size_t si = 0; si < kernels_.size(); ++si) {
    const int k = kernels_[si]->value.shape().h;
    b.add("scale " + std::to_string(si) + " kernels 3x" + std::to_string(k) + "x" +
              std::to_string(k),
          kernels_[si]->value.size());
  }
  b.add("beta, c", beta_raw_.size() + c_raw_.size());
  b.add("head 1x1 conv " + std::to_string(kernels_.size()) + "->" + std::to_string(kernels_.size()),
        head1_w_->value.size() + head1_b_->value.size());
  b.add("head 1x1 conv " + std::to_string(kernels_.size()) + "->2",
        head2_w_->value.size() + head2_b_->value.size());
  return b;
}

template Var<float> vesselness(Var<float>, Var<float>, Var<float>, Polarity, float);
template Var<double> vesselness(Var<double>, Var<double>, Var<double>, Polarity, double);
template class FrangiNet<float>;
template class FrangiNet<double>;

}  // namespace vk
