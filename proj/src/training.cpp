#include "vesselkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vesselkit/ops.hpp"

namespace vk {

void LossConfig::validate() const {
  if (!(gamma >= 0.0)) throw ConfigError("loss: gamma must be >= 0");
  if (!(lambda_w >= 0.0) || !(lambda_s >= 0.0)) throw ConfigError("loss: lambda_w and lambda_s must be >= 0");
  if (!(log_epsilon >= 0.0)) throw ConfigError("loss: log_epsilon must be >= 0");
  if (balance == ClassBalance::kFixed && (!(pos_weight > 0.0) || !(neg_weight > 0.0))) {
    throw ConfigError("loss: fixed class weights must be positive");
  }
}

template <typename T>
std::array<double, 2> class_weights(const Tensor<T>& labels, const Tensor<T>& weight,
                                    const LossConfig& cfg) {
  if (cfg.balance == ClassBalance::kFixed) return {cfg.neg_weight, cfg.pos_weight};
  double n[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (weight[i] == T{0}) continue;
    n[labels[i] > T{0.5} ? 1 : 0] += 1.0;
  }
  if (n[0] == 0.0 || n[1] == 0.0) return {1.0, 1.0};
  const double m = n[0] + n[1];
  return {m / (2.0 * n[0]), m / (2.0 * n[1])};
}

template <typename T>
Var<T> focal_loss(Var<T> probs, const Tensor<T>& labels, const Tensor<T>& weight,
                  const LossConfig& cfg) {
  cfg.validate();
  const Shape s = probs.shape();
  const Shape plane_shape{s.n, 1, s.h, s.w};
  if (s.c != 2) throw ConfigError("focal_loss: probabilities must have 2 channels, got " + s.str());
  if (labels.shape() != plane_shape || weight.shape() != plane_shape) {
    throw ConfigError("focal_loss: labels " + labels.shape().str() + " and weight " +
                      weight.shape().str() + " must be " + plane_shape.str());
  }
  const Tensor<T>& p = probs.value();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = static_cast<double>(p[i]);
    if (!(v >= -1e-6 && v <= 1.0 + 1e-6)) {
      throw ContractError("focal_loss: input is not a probability (" + std::to_string(v) +
                          " at element " + std::to_string(i) + ")");
    }
  }
  const auto alpha = class_weights(labels, weight, cfg);
  const double gamma = cfg.gamma;
  const double eps = cfg.log_epsilon;
  const double count = static_cast<double>(plane_shape.numel());
  const std::size_t plane = s.plane_size();

  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t q = 0; q < plane; ++q) {
      const std::size_t li = static_cast<std::size_t>(n) * plane + q;
      const int t = labels[li] > T{0.5} ? 1 : 0;
      const double pt = std::clamp(static_cast<double>(p[p.index(n, t, 0, 0) + q]), 0.0, 1.0);
      total -= alpha[t] * static_cast<double>(weight[li]) * std::pow(1.0 - pt, gamma) * std::log(pt + eps);
    }
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / count));
  return probs.graph()->record(
      "focal_loss", {probs}, std::move(out),
      [s, labels, weight, alpha, gamma, eps, count](BackwardContext<T>& ctx) {
        if (!ctx.input_grads[0]) return;
        const Tensor<T>& p = *ctx.inputs[0];
        Tensor<T>& gp = *ctx.input_grads[0];
        const double go = static_cast<double>(ctx.grad_output[0]);
        const std::size_t plane = s.plane_size();
        for (int n = 0; n < s.n; ++n) {
          for (std::size_t q = 0; q < plane; ++q) {
            const std::size_t li = static_cast<std::size_t>(n) * plane + q;
            const int t = labels[li] > T{0.5} ? 1 : 0;
            const std::size_t pi = p.index(n, t, 0, 0) + q;
            const double pt = std::clamp(static_cast<double>(p[pi]), 0.0, 1.0);
            const double u = 1.0 - pt;
            // d/dp of (1-p)^gamma log(p+eps)
            double d = std::pow(u, gamma) / (pt + eps);
            if (gamma != 0.0 && u > 0.0) d -= gamma * std::pow(u, gamma - 1.0) * std::log(pt + eps);
            gp[pi] += static_cast<T>(-go * alpha[t] * static_cast<double>(weight[li]) * d / count);
          }
        }
      });
}

template <typename T>
Var<T> weight_regularizer(Graph<T>& g, const std::vector<Parameter<T>*>& params) {
  std::optional<Var<T>> acc;
  std::size_t count = 0;
  for (Parameter<T>* p : params) {
    if (!p->regularized()) continue;
    Var<T> s = sum<T>(square<T>(g.parameter(*p)));
    acc = acc ? add<T>(*acc, s) : s;
    count += p->value.size();
  }
  if (!acc) return g.constant(Tensor<T>::scalar(T{0}));
  return scale<T>(*acc, static_cast<T>(1.0 / static_cast<double>(count)));
}

template <typename T>
LossTerms<T> total_loss(Var<T> probs, const Tensor<T>& labels, const Tensor<T>& weight,
                        const std::vector<Parameter<T>*>& params, std::optional<Var<T>> prep_in,
                        std::optional<Var<T>> prep_out, const LossConfig& cfg) {
  if (prep_in.has_value() != prep_out.has_value()) {
    throw ConfigError("total_loss: preprocessing input and output must be given together");
  }
  if (prep_in && prep_in->shape() != prep_out->shape()) {
    throw ConfigError("total_loss: preprocessing input " + prep_in->shape().str() + " and output " +
                      prep_out->shape().str() + " differ in shape");
  }
  Graph<T>& g = *probs.graph();
  LossTerms<T> terms;
  Var<T> total = focal_loss<T>(probs, labels, weight, cfg);
  terms.focal = static_cast<double>(total.value()[0]);
  if (cfg.use_rw) {
    Var<T> rw = weight_regularizer<T>(g, params);
    terms.reg_w = static_cast<double>(rw.value()[0]);
    total = add<T>(total, scale<T>(rw, static_cast<T>(cfg.lambda_w)));
  }
  if (cfg.use_rs && prep_in) {
    Var<T> rs = mse<T>(*prep_in, *prep_out);
    terms.reg_s = static_cast<double>(rs.value()[0]);
    total = add<T>(total, scale<T>(rs, static_cast<T>(cfg.lambda_s)));
  }
  terms.total = total;
  return terms;
}

template <typename T>
double OptimizerState<T>::learning_rate() const {
  return cfg.lr0 * std::pow(cfg.decay, static_cast<double>(step));
}

template <typename T>
void adam_step(OptimizerState<T>& state, const std::vector<Parameter<T>*>& params) {
  std::vector<Parameter<T>*> train;
  for (Parameter<T>* p : params) {
    if (p->trainable()) train.push_back(p);
  }
  if (state.m.empty()) {
    for (Parameter<T>* p : train) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != train.size()) {
    throw ContractError("adam_step: parameter list changed between steps");
  }
  const OptimizerConfig& c = state.cfg;
  const double lr = state.learning_rate();
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < train.size(); ++k) {
    Parameter<T>& p = *train[k];
    if (p.grad.shape() != p.value.shape() || state.m[k].shape() != p.value.shape()) {
      throw ContractError("adam_step: missing gradient for " + p.name);
    }
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * g;
      const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.epsilon);
      p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - step);
    }
  }
  ++state.step;
}

namespace {

int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename V>
Grid<V> crop_plane(const Grid<V>& g, int top, int left, int size) {
  Grid<V> out(size, size);
  for (int y = 0; y < size; ++y) {
    std::copy_n(&g(top + y, left), size, &out(y, 0));
  }
  return out;
}

double sample_bilinear(const ImagePlane& g, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  auto at = [&](int yy, int xx) { return g(reflect101(yy, g.height), reflect101(xx, g.width)); };
  double v = (1.0 - fy) * (1.0 - fx) * at(y0, x0);
  if (fx != 0.0) v += (1.0 - fy) * fx * at(y0, x0 + 1);
  if (fy != 0.0) v += fy * (1.0 - fx) * at(y0 + 1, x0);
  if (fx != 0.0 && fy != 0.0) v += fy * fx * at(y0 + 1, x0 + 1);
  return v;
}

std::uint8_t sample_nearest(const BinaryPlane& g, double y, double x) {
  const int yy = static_cast<int>(std::lround(y));
  const int xx = static_cast<int>(std::lround(x));
  return g(reflect101(yy, g.height), reflect101(xx, g.width));
}

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

template <typename V>
Grid<V> mirror_pad_to(const Grid<V>& g, int min_height, int min_width) {
  if (g.height >= min_height && g.width >= min_width) return g;
  const int h = std::max(g.height, min_height);
  const int w = std::max(g.width, min_width);
  const int top = (h - g.height) / 2;
  const int left = (w - g.width) / 2;
  Grid<V> out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out(y, x) = g(reflect101(y - top, g.height), reflect101(x - left, g.width));
  }
  return out;
}

std::vector<Patch> sample_patches(const LabeledSample& sample, int size, int count, std::mt19937_64& rng) {
  if (size < 1 || count < 0) throw ConfigError("sample_patches: size must be positive and count non-negative");
  const ImagePlane image = mirror_pad_to(sample.image, size, size);
  const BinaryPlane label = mirror_pad_to(sample.label, size, size);
  const ImagePlane weight = mirror_pad_to(sample.weight, size, size);
  const BinaryPlane fov = mirror_pad_to(sample.fov, size, size);
  std::uniform_int_distribution<int> ty(0, image.height - size);
  std::uniform_int_distribution<int> tx(0, image.width - size);
  std::vector<Patch> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Patch p;
    p.top = ty(rng);
    p.left = tx(rng);
    p.image = crop_plane(image, p.top, p.left, size);
    p.label = crop_plane(label, p.top, p.left, size);
    p.weight = crop_plane(weight, p.top, p.left, size);
    p.fov = crop_plane(fov, p.top, p.left, size);
    out.push_back(std::move(p));
  }
  return out;
}

double Range::draw(std::mt19937_64& rng) const {
  if (hi < lo) throw ConfigError("augment: range upper bound below lower bound");
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void augment(std::vector<Patch>& batch, const AugmentSpec& spec, std::mt19937_64& rng) {
  if (spec.noise_sigma < 0.0) throw ConfigError("augment: noise sigma must be non-negative");
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Patch& p : batch) {
    const double theta = spec.rotation_deg.draw(rng) * std::numbers::pi / 180.0;
    const double shear = spec.shear.draw(rng);
    const double shift = spec.intensity_shift.draw(rng);
    if (theta != 0.0 || shear != 0.0) {
      const double c = std::cos(theta), s = std::sin(theta);
      // Source position = R(theta) [[1, shear], [0, 1]] (p - center) + center.
      const double a00 = c, a01 = c * shear - s, a10 = s, a11 = s * shear + c;
      const int h = p.image.height, w = p.image.width;
      const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
      Patch out = p;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double sx = snap(a00 * dx + a01 * dy + cx);
          const double sy = snap(a10 * dx + a11 * dy + cy);
          out.image(y, x) = sample_bilinear(p.image, sy, sx);
          out.weight(y, x) = sample_bilinear(p.weight, sy, sx);
          out.label(y, x) = sample_nearest(p.label, sy, sx);
          out.fov(y, x) = sample_nearest(p.fov, sy, sx);
        }
      }
      p.image = std::move(out.image);
      p.weight = std::move(out.weight);
      p.label = std::move(out.label);
      p.fov = std::move(out.fov);
    }
    for (double& v : p.image.data) {
      double n = spec.noise_sigma > 0.0 ? spec.noise_sigma * noise(rng) : 0.0;
      v = std::clamp(v + n + shift, 0.0, 1.0);
    }
  }
}

template <typename T>
BatchTensors<T> stack_batch(const std::vector<Patch>& batch) {
  if (batch.empty()) throw ConfigError("stack_batch: empty batch");
  const int h = batch.front().image.height, w = batch.front().image.width;
  const Shape s{static_cast<int>(batch.size()), 1, h, w};
  BatchTensors<T> out{Tensor<T>(s), Tensor<T>(s), Tensor<T>(s)};
  const std::size_t plane = s.plane_size();
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Patch& p = batch[n];
    if (!p.image.same_shape(h, w) || !p.label.same_shape(h, w) || !p.weight.same_shape(h, w) ||
        !p.fov.same_shape(h, w)) {
      throw ConfigError("stack_batch: patches differ in size");
    }
    for (std::size_t i = 0; i < plane; ++i) {
      out.image[n * plane + i] = static_cast<T>(p.image.data[i]);
      out.label[n * plane + i] = static_cast<T>(p.label.data[i] ? 1 : 0);
      out.weight[n * plane + i] = static_cast<T>(p.fov.data[i] ? p.weight.data[i] : 0.0);
    }
  }
  return out;
}

template Grid<double> mirror_pad_to(const Grid<double>&, int, int);
template Grid<std::uint8_t> mirror_pad_to(const Grid<std::uint8_t>&, int, int);

#define VK_INSTANTIATE_TRAINING(T)                                                                  \
  template std::array<double, 2> class_weights(const Tensor<T>&, const Tensor<T>&, const LossConfig&); \
  template Var<T> focal_loss(Var<T>, const Tensor<T>&, const Tensor<T>&, const LossConfig&);          \
  template Var<T> weight_regularizer(Graph<T>&, const std::vector<Parameter<T>*>&);                   \
  template LossTerms<T> total_loss(Var<T>, const Tensor<T>&, const Tensor<T>&,                        \
                                   const std::vector<Parameter<T>*>&, std::optional<Var<T>>,          \
                                   std::optional<Var<T>>, const LossConfig&);                         \
  template struct OptimizerState<T>;                                                                   \
  template void adam_step(OptimizerState<T>&, const std::vector<Parameter<T>*>&);                     \
  template BatchTensors<T> stack_batch(const std::vector<Patch>&);

VK_INSTANTIATE_TRAINING(float)
VK_INSTANTIATE_TRAINING(double)

}  // namespace vk
