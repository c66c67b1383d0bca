#include "vesselkit/guided_filter.hpp"

#include <cmath>
#include <random>

#include "vesselkit/ops.hpp"

namespace vk {

template <typename T>
Var<T> guided_filter(Var<T> p, Var<T> guide, const GuidedFilterConfig& cfg) {
  if (p.shape() != guide.shape()) {
    throw ConfigError("guided_filter: p " + p.shape().str() + " and guidance " +
                      guide.shape().str() + " differ in shape");
  }
  if (cfg.radius < 0 || cfg.epsilon < 0.0) {
    throw ConfigError("guided_filter: radius and epsilon must be non-negative");
  }
  const int r = cfg.radius;
  Graph<T>& g = *p.graph();
  Var<T> mean_i = box_mean<T>(guide, r);
  Var<T> mean_p = box_mean<T>(p, r);
  Var<T> cov = sub<T>(box_mean<T>(mul<T>(guide, p), r), mul<T>(mean_i, mean_p));
  Var<T> var = sub<T>(box_mean<T>(mul<T>(guide, guide), r), mul<T>(mean_i, mean_i));
  Var<T> eps = g.constant(Tensor<T>::scalar(static_cast<T>(cfg.epsilon)));
  Var<T> a = div<T>(cov, add<T>(var, eps));
  Var<T> b = sub<T>(mean_p, mul<T>(a, mean_i));
  return add<T>(mul<T>(box_mean<T>(a, r), guide), box_mean<T>(b, r));
}

ImagePlane guided_filter(const ImagePlane& p, const ImagePlane& guide,
                         const GuidedFilterConfig& cfg) {
  require_same_shape("guided_filter", p.height, p.width, guide.height, guide.width);
  Graph<double> g;
  Var<double> q = guided_filter<double>(g.constant(to_tensor<double>(p)),
                                        g.constant(to_tensor<double>(guide)), cfg);
  return plane_from_tensor(q.value());
}

template <typename T>
GuidedFilterLayer<T>::GuidedFilterLayer(GuidedFilterLayerConfig cfg, std::uint64_t seed,
                                        std::string prefix)
    : cfg_(cfg) {
  if (cfg_.can.width < 1 || cfg_.extractor_width < 1) {
    throw ConfigError("GuidedFilterLayer: widths must be positive");
  }
  std::mt19937_64 rng(seed);
  auto he = [&](Shape s) {
    const double fan_in = static_cast<double>(s.c) * s.h * s.w;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    Tensor<T> t(s);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return t;
  };

  const int w = cfg_.can.width;
  const std::size_t layers = cfg_.can.dilations.size();
  for (std::size_t i = 0; i < layers; ++i) {
    const int cin = i == 0 ? 1 : w;
    const int cout = i + 1 == layers ? 1 : w;
    const std::string tag = prefix + "can" + std::to_string(i) + ".";
    ConvLayer layer;
    layer.dilation = cfg_.can.dilations[i];
    layer.weight = &params_.add(tag + "weight", he(Shape{cout, cin, 3, 3}), ParamRole::kConvWeight);
    layer.bias = &params_.add(tag + "bias", Tensor<T>(Shape{1, cout, 1, 1}), ParamRole::kBias);
    if (i + 1 < layers) {
      layer.norm_scale = &params_.add(tag + "norm_scale", Tensor<T>(Shape{1, cout, 1, 1}, T{1}),
                                      ParamRole::kNormScale);
      layer.norm_shift = &params_.add(tag + "norm_shift", Tensor<T>(Shape{1, cout, 1, 1}),
                                      ParamRole::kNormShift);
    }
    can_.push_back(layer);
  }

  const int fw = cfg_.extractor_width;
  std::normal_distribution<double> small(0.0, 0.01);
  Tensor<T> e1(Shape{fw, 1, 3, 3});
  Tensor<T> e2(Shape{1, fw, 3, 3});
  for (auto& v : e1.values()) v = static_cast<T>(small(rng));
  for (auto& v : e2.values()) v = static_cast<T>(small(rng));
  e1(0, 0, 1, 1) = T{1};
  e2(0, 0, 1, 1) = T{1};
  ConvLayer x1, x2;
  x1.weight = &params_.add(prefix + "extract0.weight", std::move(e1), ParamRole::kConvWeight);
  x1.bias = &params_.add(prefix + "extract0.bias", Tensor<T>(Shape{1, fw, 1, 1}), ParamRole::kBias);
  x2.weight = &params_.add(prefix + "extract1.weight", std::move(e2), ParamRole::kConvWeight);
  x2.bias = &params_.add(prefix + "extract1.bias", Tensor<T>(Shape{1, 1, 1, 1}), ParamRole::kBias);
  extractor_ = {x1, x2};
}

template <typename T>
Var<T> GuidedFilterLayer<T>::can_forward(Graph<T>& g, Var<T> p) const {
  if (p.shape().c != 1) throw ConfigError("CAN: input must be single-channel");
  Var<T> x = p;
  for (const ConvLayer& layer : can_) {
    x = conv2d<T>(x, g.parameter(*layer.weight), g.parameter(*layer.bias),
                  ConvOptions::same(3, layer.dilation));
    if (layer.norm_scale != nullptr) {
      x = affine_channels<T>(x, g.parameter(*layer.norm_scale), g.parameter(*layer.norm_shift));
      x = leaky_relu<T>(x, static_cast<T>(cfg_.can.slope));
    }
  }
  return x;
}

template <typename T>
Var<T> GuidedFilterLayer<T>::extract(Graph<T>& g, Var<T> p) const {
  Var<T> h = conv2d<T>(p, g.parameter(*extractor_[0].weight), g.parameter(*extractor_[0].bias),
                       ConvOptions::same(3));
  h = leaky_relu<T>(h, static_cast<T>(cfg_.extractor_slope));
  return conv2d<T>(h, g.parameter(*extractor_[1].weight), g.parameter(*extractor_[1].bias),
                   ConvOptions::same(3));
}

template <typename T>
Var<T> GuidedFilterLayer<T>::forward(Graph<T>& g, Var<T> p) const {
  Var<T> guide = can_forward(g, p);
  Var<T> feat = extract(g, p);
  return guided_filter<T>(feat, guide, cfg_.filter);
}

template <typename T>
ParamBreakdown GuidedFilterLayer<T>::count_params() const {
  ParamBreakdown b;
  for (std::size_t i = 0; i < can_.size(); ++i) {
    const ConvLayer& l = can_[i];
    const Shape s = l.weight->value.shape();
    b.add("CAN conv " + std::to_string(i) + " (3x3 d" + std::to_string(l.dilation) + ", " +
              std::to_string(s.c) + "->" + std::to_string(s.n) + ")",
          l.weight->value.size() + l.bias->value.size());
    if (l.norm_scale != nullptr) {
      b.add("CAN norm " + std::to_string(i) + " (scale/shift)",
            l.norm_scale->value.size() + l.norm_shift->value.size());
    }
  }
  for (std::size_t i = 0; i < extractor_.size(); ++i) {
    const Shape s = extractor_[i].weight->value.shape();
    b.add("extractor conv " + std::to_string(i) + " (3x3, " + std::to_string(s.c) + "->" +
              std::to_string(s.n) + ")",
          extractor_[i].weight->value.size() + extractor_[i].bias->value.size());
  }
  return b;
}

template <typename T>
void GuidedFilterLayer<T>::set_flat_guidance(T guidance_bias) {
  for (ConvLayer& l : can_) {
    l.weight->value.fill(T{0});
    l.bias->value.fill(T{0});
    if (l.norm_scale != nullptr) {
      l.norm_scale->value.fill(T{1});
      l.norm_shift->value.fill(T{0});
    }
  }
  can_.back().bias->value.fill(guidance_bias);
  for (ConvLayer& l : extractor_) {
    l.weight->value.fill(T{0});
    l.bias->value.fill(T{0});
  }
  extractor_[0].weight->value(0, 0, 1, 1) = T{1};
  extractor_[1].weight->value(0, 0, 1, 1) = T{1};
}

template Var<float> guided_filter(Var<float>, Var<float>, const GuidedFilterConfig&);
template Var<double> guided_filter(Var<double>, Var<double>, const GuidedFilterConfig&);
template class GuidedFilterLayer<float>;
template class GuidedFilterLayer<double>;

}  // namespace vk
