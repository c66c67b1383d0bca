#include "vesselkit/unet.hpp"

#include <cmath>
#include <random>

#include "vesselkit/ops.hpp"

namespace vk {

template <typename T>
Var<T> norm_layer(Var<T> x, Var<T> scale, Var<T> shift, bool training, Tensor<T>* running_mean,
                  Tensor<T>* running_var, double momentum, double epsilon) {
  Graph<T>& g = *x.graph();
  if (scale.graph() != &g || shift.graph() != &g) throw StateError("norm_layer: inputs from different graphs");
  const Shape s = x.shape();
  const auto channels = static_cast<std::size_t>(s.c);
  if (scale.value().size() != channels || shift.value().size() != channels) {
    throw ConfigError("norm_layer: scale/shift must have one entry per channel of " + s.str());
  }
  if (!training) {
    if (running_mean == nullptr || running_var == nullptr) {
      throw StateError("norm_layer: inference mode needs running statistics");
    }
    Tensor<T> inv_std(scale.shape());
    Tensor<T> mean_t(scale.shape());
    for (std::size_t c = 0; c < channels; ++c) {
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>((*running_var)[c]) + epsilon));
      mean_t[c] = (*running_mean)[c];
    }
    Var<T> a = mul<T>(scale, g.constant(std::move(inv_std)));
    Var<T> b = sub<T>(shift, mul<T>(a, g.constant(std::move(mean_t))));
    return affine_channels<T>(x, a, b);
  }

  const std::size_t plane = s.plane_size();
  const double m = static_cast<double>(s.n) * static_cast<double>(plane);
  const Tensor<T>& in = x.value();
  Tensor<T> xhat(s);
  std::vector<T> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double mu = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = in.index(n, static_cast<int>(c), 0, 0);
      for (std::size_t p = 0; p < plane; ++p) mu += static_cast<double>(in[off + p]);
    }
    mu /= m;
    double var = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = in.index(n, static_cast<int>(c), 0, 0);
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = static_cast<double>(in[off + p]) - mu;
        var += d * d;
      }
    }
    var /= m;
    const double is = 1.0 / std::sqrt(var + epsilon);
    inv_std[c] = static_cast<T>(is);
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = in.index(n, static_cast<int>(c), 0, 0);
      for (std::size_t p = 0; p < plane; ++p) {
        xhat[off + p] = static_cast<T>((static_cast<double>(in[off + p]) - mu) * is);
      }
    }
    if (running_mean != nullptr && running_var != nullptr) {
      const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
      (*running_mean)[c] = static_cast<T>(momentum * (*running_mean)[c] + (1.0 - momentum) * mu);
      (*running_var)[c] = static_cast<T>(momentum * (*running_var)[c] + (1.0 - momentum) * unbiased);
    }
  }
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T a = scale.value()[c];
      const T b = shift.value()[c];
      const std::size_t off = in.index(n, static_cast<int>(c), 0, 0);
      for (std::size_t p = 0; p < plane; ++p) out[off + p] = a * xhat[off + p] + b;
    }
  }
  return g.record(
      "norm_layer", {x, scale, shift}, std::move(out),
      [s, xhat = std::move(xhat), inv_std = std::move(inv_std), m](BackwardContext<T>& ctx) {
        const std::size_t plane = s.plane_size();
        const auto& gamma = *ctx.inputs[1];
        for (int c = 0; c < s.c; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int n = 0; n < s.n; ++n) {
            const std::size_t off = xhat.index(n, c, 0, 0);
            for (std::size_t p = 0; p < plane; ++p) {
              const double go = static_cast<double>(ctx.grad_output[off + p]);
              sum_g += go;
              sum_gx += go * static_cast<double>(xhat[off + p]);
            }
          }
          if (ctx.input_grads[1]) (*ctx.input_grads[1])[c] += static_cast<T>(sum_gx);
          if (ctx.input_grads[2]) (*ctx.input_grads[2])[c] += static_cast<T>(sum_g);
          if (!ctx.input_grads[0]) continue;
          const double k = static_cast<double>(gamma[c]) * static_cast<double>(inv_std[c]) / m;
          for (int n = 0; n < s.n; ++n) {
            const std::size_t off = xhat.index(n, c, 0, 0);
            for (std::size_t p = 0; p < plane; ++p) {
              const double go = static_cast<double>(ctx.grad_output[off + p]);
              (*ctx.input_grads[0])[off + p] += static_cast<T>(
                  k * (m * go - sum_g - static_cast<double>(xhat[off + p]) * sum_gx));
            }
          }
        }
      });
}

template <typename T>
UNet<T>::UNet(UNetConfig cfg, std::uint64_t seed, std::string prefix) : cfg_(cfg) {
  if (cfg_.levels < 1) throw ConfigError("UNet: levels must be >= 1");
  if (cfg_.init_features < 1) throw ConfigError("UNet: init_features must be >= 1");
  std::mt19937_64 rng(seed);
  auto make = [&](const std::string& name, int cin, int cout, int k, bool norm) {
    ConvBlock b;
    Tensor<T> w(Shape{cout, cin, k, k});
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (static_cast<double>(cin) * k * k)));
    for (auto& v : w.values()) v = static_cast<T>(dist(rng));
    b.weight = &params_.add(prefix + name + ".weight", std::move(w), ParamRole::kConvWeight);
    b.bias = &params_.add(prefix + name + ".bias", Tensor<T>(Shape{1, cout, 1, 1}), ParamRole::kBias);
    if (norm && cfg_.use_norm) {
      const Shape cs{1, cout, 1, 1};
      b.scale = &params_.add(prefix + name + ".norm_scale", Tensor<T>(cs, T{1}), ParamRole::kNormScale);
      b.shift = &params_.add(prefix + name + ".norm_shift", Tensor<T>(cs), ParamRole::kNormShift);
      b.running_mean = &params_.add(prefix + name + ".running_mean", Tensor<T>(cs), ParamRole::kBuffer);
      b.running_var = &params_.add(prefix + name + ".running_var", Tensor<T>(cs, T{1}), ParamRole::kBuffer);
    }
    return b;
  };
  const int f = cfg_.init_features;
  int cin = cfg_.in_channels();
  for (int l = 0; l < cfg_.levels; ++l) {
    const int c = f << l;
    const std::string base = "enc" + std::to_string(l);
    encoder_.push_back({make(base + ".conv1", cin, c, 3, true), make(base + ".conv2", c, c, 3, true)});
    cin = c;
  }
  for (int l = cfg_.levels - 2; l >= 0; --l) {
    const int c = f << l;
    const std::string base = "dec" + std::to_string(l);
    up_.push_back(make(base + ".up", c * 2, c, 1, false));
    decoder_.push_back({make(base + ".conv1", c * 2, c, 3, true), make(base + ".conv2", c, c, 3, true)});
  }
  head_ = make("head", f, cfg_.out_channels(), 1, false);
}

template <typename T>
Var<T> UNet<T>::conv(Graph<T>& g, Var<T> x, const ConvBlock& b) const {
  const int k = b.weight->value.shape().h;
  Var<T> w = g.parameter(*b.weight);
  Var<T> bias = g.parameter(*b.bias);
  return conv2d<T>(x, w, bias, ConvOptions::same(k, 1));
}

template <typename T>
Var<T> UNet<T>::conv_norm_relu(Graph<T>& g, Var<T> x, const ConvBlock& b, bool training) const {
  Var<T> y = conv(g, x, b);
  if (b.scale != nullptr) {
    y = norm_layer<T>(y, g.parameter(*b.scale), g.parameter(*b.shift), training,
                      &b.running_mean->value, &b.running_var->value, cfg_.norm_momentum,
                      cfg_.norm_epsilon);
  }
  return relu<T>(y);
}

template <typename T>
Var<T> UNet<T>::forward(Graph<T>& g, Var<T> x, bool training) const {
  const Shape s = x.shape();
  if (s.c != cfg_.in_channels()) {
    throw ConfigError("UNet: expected " + std::to_string(cfg_.in_channels()) + " input channel, got " +
                      s.str());
  }
  const int div = cfg_.divisor();
  const int pad_h = (div - s.h % div) % div;
  const int pad_w = (div - s.w % div) % div;
  Var<T> h = (pad_h || pad_w) ? pad_reflect<T>(x, 0, pad_h, 0, pad_w) : x;

  std::vector<Var<T>> skips;
  for (int l = 0; l < cfg_.levels; ++l) {
    if (l > 0) h = max_pool2x2<T>(h);
    h = conv_norm_relu(g, h, encoder_[l][0], training);
    h = conv_norm_relu(g, h, encoder_[l][1], training);
    skips.push_back(h);
  }
  for (std::size_t d = 0; d < decoder_.size(); ++d) {
    const int l = cfg_.levels - 2 - static_cast<int>(d);
    h = conv(g, upsample_nearest2x<T>(h), up_[d]);
    h = concat_channels<T>({skips[l], h});
    h = conv_norm_relu(g, h, decoder_[d][0], training);
    h = conv_norm_relu(g, h, decoder_[d][1], training);
  }
  h = conv(g, h, head_);
  h = cfg_.mode == UNetMode::kSegment ? softmax_channels<T>(h) : sigmoid<T>(h);
  if (pad_h || pad_w) h = crop<T>(h, 0, 0, s.h, s.w);
  return h;
}

template <typename T>
ParamBreakdown UNet<T>::count_params() const {
  ParamBreakdown b;
  std::size_t conv = 0, norm = 0;
  for (const auto* p : params_.trainable()) {
    if (p->role == ParamRole::kNormScale || p->role == ParamRole::kNormShift) {
      norm += p->value.size();
    } else {
      conv += p->value.size();
    }
  }
  b.add("unet.conv", conv);
  b.add("unet.norm", norm);
  return b;
}

ParamBreakdown count_unet_params(const UNetConfig& cfg) {
  if (cfg.levels < 1 || cfg.init_features < 1) throw ConfigError("count_unet_params: invalid config");
  auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return cin * cout * k * k + cout; };
  const std::size_t f = static_cast<std::size_t>(cfg.init_features);
  std::size_t convs = 0, norm_channels = 0;
  std::size_t cin = static_cast<std::size_t>(cfg.in_channels());
  for (int l = 0; l < cfg.levels; ++l) {
    const std::size_t c = f << l;
    convs += conv(cin, c, 3) + conv(c, c, 3);
    norm_channels += 2 * c;
    cin = c;
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const std::size_t c = f << l;
    convs += conv(2 * c, c, 1) + conv(2 * c, c, 3) + conv(c, c, 3);
    norm_channels += 2 * c;
  }
  convs += conv(f, static_cast<std::size_t>(cfg.out_channels()), 1);
  ParamBreakdown b;
  b.add("unet.conv", convs);
  b.add("unet.norm", cfg.use_norm ? 2 * norm_channels : 0);
  return b;
}

#define VK_INSTANTIATE_UNET(T)                                                                   \
  template Var<T> norm_layer(Var<T>, Var<T>, Var<T>, bool, Tensor<T>*, Tensor<T>*, double, double); \
  template class UNet<T>;

VK_INSTANTIATE_UNET(float)
VK_INSTANTIATE_UNET(double)

}  // namespace vk
