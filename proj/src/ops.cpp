#include "vesselkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace vk {
namespace {

template <typename T>
Graph<T>& graph_of(Var<T> a) {
  if (!a.valid()) throw StateError("operation on an unbound variable");
  return *a.graph();
}

template <typename T>
Graph<T>& graph_of(Var<T> a, Var<T> b) {
  if (!a.valid() || !b.valid()) throw StateError("operation on an unbound variable");
  if (a.graph() != b.graph()) throw StateError("operands belong to different graphs");
  return *a.graph();
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

template <typename T>
Broadcast broadcast_mode(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.size() == 1) return Broadcast::kRightScalar;
  if (a.size() == 1) return Broadcast::kLeftScalar;
  throw ConfigError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                    b.shape().str());
}

template <typename T>
const Shape& result_shape(const Tensor<T>& a, const Tensor<T>& b, Broadcast m) {
  return m == Broadcast::kLeftScalar ? b.shape() : a.shape();
}

// Accumulate an elementwise partial into an operand gradient that may be a
// broadcast scalar.
template <typename T>
void accumulate(Tensor<T>* g, std::size_t k, T v) {
  if (g == nullptr) return;
  if (g->size() == 1) {
    (*g)[0] += v;
  } else {
    (*g)[k] += v;
  }
}

template <typename T, typename Fwd, typename Bwd>
Var<T> binary(const char* name, Var<T> a, Var<T> b, Fwd fwd, Bwd bwd) {
  Graph<T>& g = graph_of(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Broadcast mode = broadcast_mode(av, bv, name);
  Tensor<T> out(result_shape(av, bv, mode));
  const std::size_t n = out.size();
  const std::size_t sa = av.size() == 1 && n != 1 ? 0 : 1;
  const std::size_t sb = bv.size() == 1 && n != 1 ? 0 : 1;
  for (std::size_t k = 0; k < n; ++k) out[k] = fwd(av[k * sa], bv[k * sb], k);
  return g.record(name, {a, b}, std::move(out), [sa, sb, bwd](BackwardContext<T>& ctx) {
    const auto& x = *ctx.inputs[0];
    const auto& y = *ctx.inputs[1];
    for (std::size_t k = 0; k < ctx.grad_output.size(); ++k) {
      const T go = ctx.grad_output[k];
      const auto [da, db] = bwd(x[k * sa], y[k * sb], ctx.output[k]);
      accumulate(ctx.input_grads[0], k * sa, go * da);
      accumulate(ctx.input_grads[1], k * sb, go * db);
    }
  });
}

template <typename T>
std::uint64_t sign_hash(const Tensor<T>& x, bool enabled) {
  if (!enabled) return 0;
  std::uint64_t h = 1;
  for (std::size_t k = 0; k < x.size(); ++k) h = mix_branch(h, x[k] < T{0} ? 1 : 2);
  return h;
}

// kinked: the op is non-differentiable at 0, so its sign pattern is a branch.
template <typename T, typename Fwd, typename Bwd>
Var<T> unary(const char* name, Var<T> x, Fwd fwd, Bwd bwd, bool kinked = false) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = fwd(xv[k]);
  const std::uint64_t h = kinked ? sign_hash(xv, g.track_branches()) : 0;
  return g.record(
      name, {x}, std::move(out),
      [bwd](BackwardContext<T>& ctx) {
        Tensor<T>* gi = ctx.input_grads[0];
        const auto& xin = *ctx.inputs[0];
        for (std::size_t k = 0; k < ctx.grad_output.size(); ++k) {
          (*gi)[k] += ctx.grad_output[k] * bwd(xin[k], ctx.output[k]);
        }
      },
      h);
}

// --- convolution kernels --------------------------------------------------

struct ConvGeometry {
  int n, cin, h, w, cout, kh, kw, ho, wo;
  ConvOptions o;
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& in, const Tensor<T>& k, ConvOptions o) {
  const Shape& s = in.shape();
  const Shape& ks = k.shape();
  if (ks.h % 2 == 0 || ks.w % 2 == 0) {
    throw ConfigError("conv2d: kernel size must be odd, got " + ks.str());
  }
  if (ks.c != s.c) {
    throw ConfigError("conv2d: input has " + std::to_string(s.c) + " channels, kernel expects " +
                      std::to_string(ks.c));
  }
  if (o.stride < 1 || o.dilation < 1 || o.padding < 0) {
    throw ConfigError("conv2d: stride and dilation must be positive, padding non-negative");
  }
  const int ho = (s.h + 2 * o.padding - o.dilation * (ks.h - 1) - 1) / o.stride + 1;
  const int wo = (s.w + 2 * o.padding - o.dilation * (ks.w - 1) - 1) / o.stride + 1;
  if (ho < 1 || wo < 1) throw ConfigError("conv2d: kernel larger than padded input");
  return {s.n, s.c, s.h, s.w, ks.n, ks.h, ks.w, ho, wo, o};
}

// Visits every (output row, input row, column span) touched by a kernel tap.
// fn(out_offset, in_offset, count, stride) with out index ox in [x0, x1).
template <typename Fn>
void for_each_tap_row(const ConvGeometry& g, int ky, int kx, Fn&& fn) {
  const int dy = ky * g.o.dilation - g.o.padding;
  const int dx = kx * g.o.dilation - g.o.padding;
  const int s = g.o.stride;
  // ox*s + dx in [0, w)
  const int x0 = std::max(0, (-dx + s - 1) / s);
  const int x1 = std::min(g.wo, (g.w - dx + s - 1) / s);
  if (x1 <= x0) return;
  for (int oy = 0; oy < g.ho; ++oy) {
    const int iy = oy * s + dy;
    if (iy < 0 || iy >= g.h) continue;
    fn(static_cast<std::size_t>(oy) * g.wo + x0,
       static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(x0 * s + dx), x1 - x0, s);
  }
}

template <typename T>
void conv_forward(const ConvGeometry& g, const T* in, const T* k, const T* bias, T* out) {
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
  const std::size_t out_plane = static_cast<std::size_t>(g.ho) * g.wo;
  for (int n = 0; n < g.n; ++n) {
    for (int oc = 0; oc < g.cout; ++oc) {
      T* o = out + (static_cast<std::size_t>(n) * g.cout + oc) * out_plane;
      std::fill(o, o + out_plane, bias != nullptr ? bias[oc] : T{0});
      for (int ic = 0; ic < g.cin; ++ic) {
        const T* ip = in + (static_cast<std::size_t>(n) * g.cin + ic) * in_plane;
        const T* kp = k + (static_cast<std::size_t>(oc) * g.cin + ic) * g.kh * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
          for (int kx = 0; kx < g.kw; ++kx) {
            const T wv = kp[ky * g.kw + kx];
            if (wv == T{0}) continue;
            for_each_tap_row(g, ky, kx, [&](std::size_t oo, std::size_t io, int count, int s) {
              T* __restrict orow = o + oo;
              const T* __restrict irow = ip + io;
              if (s == 1) {
                for (int x = 0; x < count; ++x) orow[x] += wv * irow[x];
              } else {
                for (int x = 0; x < count; ++x) orow[x] += wv * irow[x * s];
              }
            });
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const ConvGeometry& g, const T* in, const T* k, const T* gout, T* gin,
                   T* gk, T* gb) {
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
  const std::size_t out_plane = static_cast<std::size_t>(g.ho) * g.wo;
  for (int n = 0; n < g.n; ++n) {
    for (int oc = 0; oc < g.cout; ++oc) {
      const T* go = gout + (static_cast<std::size_t>(n) * g.cout + oc) * out_plane;
      if (gb != nullptr) {
        T acc{0};
        for (std::size_t i = 0; i < out_plane; ++i) acc += go[i];
        gb[oc] += acc;
      }
      for (int ic = 0; ic < g.cin; ++ic) {
        const std::size_t ioff = (static_cast<std::size_t>(n) * g.cin + ic) * in_plane;
        const std::size_t koff = (static_cast<std::size_t>(oc) * g.cin + ic) * g.kh * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
          for (int kx = 0; kx < g.kw; ++kx) {
            const T wv = k[koff + ky * g.kw + kx];
            T acc{0};
            for_each_tap_row(g, ky, kx, [&](std::size_t oo, std::size_t io, int count, int s) {
              const T* __restrict grow = go + oo;
              const T* __restrict irow = in + ioff + io;
              if (gin != nullptr && wv != T{0}) {
                T* __restrict girow = gin + ioff + io;
                for (int x = 0; x < count; ++x) girow[x * s] += wv * grow[x];
              }
              if (gk != nullptr) {
                T dot{0};
                for (int x = 0; x < count; ++x) dot += grow[x] * irow[x * s];
                acc += dot;
              }
            });
            if (gk != nullptr) gk[koff + ky * g.kw + kx] += acc;
          }
        }
      }
    }
  }
}

// Sum over a (2r+1) window along rows then columns, truncated at the border.
template <typename T>
void box_sum_plane(const T* in, T* out, int h, int w, int r, std::vector<T>& tmp,
                   std::vector<T>& prefix) {
  tmp.assign(static_cast<std::size_t>(h) * w, T{0});
  prefix.assign(static_cast<std::size_t>(std::max(h, w)) + 1, T{0});
  for (int y = 0; y < h; ++y) {
    const T* row = in + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) prefix[x + 1] = prefix[x] + row[x];
    T* trow = tmp.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      trow[x] = prefix[std::min(w - 1, x + r) + 1] - prefix[std::max(0, x - r)];
    }
  }
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) prefix[y + 1] = prefix[y] + tmp[static_cast<std::size_t>(y) * w + x];
    for (int y = 0; y < h; ++y) {
      out[static_cast<std::size_t>(y) * w + x] =
          prefix[std::min(h - 1, y + r) + 1] - prefix[std::max(0, y - r)];
    }
  }
}

inline int window_count(int i, int n, int r) {
  return std::min(n - 1, i + r) - std::max(0, i - r) + 1;
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::optional<Var<T>> bias, ConvOptions opts) {
  Graph<T>& g = graph_of(input, kernel);
  const Tensor<T>& in = input.value();
  const Tensor<T>& k = kernel.value();
  const ConvGeometry geo = conv_geometry(in, k, opts);
  const T* bptr = nullptr;
  std::vector<Var<T>> inputs{input, kernel};
  if (bias) {
    if (bias->graph() != &g) throw StateError("conv2d: bias belongs to a different graph");
    if (bias->value().size() != static_cast<std::size_t>(geo.cout)) {
      throw ConfigError("conv2d: bias has " + std::to_string(bias->value().size()) +
                        " entries, expected " + std::to_string(geo.cout));
    }
    bptr = bias->value().data();
    inputs.push_back(*bias);
  }
  Tensor<T> out(Shape{geo.n, geo.cout, geo.ho, geo.wo});
  conv_forward(geo, in.data(), k.data(), bptr, out.data());
  return g.record("conv2d", inputs, std::move(out), [geo](BackwardContext<T>& ctx) {
    T* gb = ctx.input_grads.size() > 2 && ctx.input_grads[2] ? ctx.input_grads[2]->data() : nullptr;
    conv_backward(geo, ctx.inputs[0]->data(), ctx.inputs[1]->data(), ctx.grad_output.data(),
                  ctx.input_grads[0] ? ctx.input_grads[0]->data() : nullptr,
                  ctx.input_grads[1] ? ctx.input_grads[1]->data() : nullptr, gb);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary<T>(
      "add", a, b, [](T x, T y, std::size_t) { return x + y; },
      [](T, T, T) { return std::pair<T, T>{T{1}, T{1}}; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary<T>(
      "sub", a, b, [](T x, T y, std::size_t) { return x - y; },
      [](T, T, T) { return std::pair<T, T>{T{1}, T{-1}}; });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary<T>(
      "mul", a, b, [](T x, T y, std::size_t) { return x * y; },
      [](T x, T y, T) { return std::pair<T, T>{y, x}; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b, T guard) {
  return binary<T>(
      "div", a, b,
      [guard](T x, T y, std::size_t k) {
        if (!(std::abs(y) > guard)) {
          throw NumericError("div: denominator " + std::to_string(y) + " within guard " +
                             std::to_string(guard) + " at element " + std::to_string(k));
        }
        return x / y;
      },
      [](T, T y, T out) { return std::pair<T, T>{T{1} / y, -out / y}; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T c) {
  return unary<T>(
      "add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
  return unary<T>(
      "scale", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T out) { return out; });
}

template <typename T>
Var<T> sqrt(Var<T> x) {
  const Tensor<T>& xv = x.value();
  for (std::size_t k = 0; k < xv.size(); ++k) {
    if (xv[k] < T{0}) {
      throw NumericError("sqrt: negative input " + std::to_string(xv[k]) + " at element " +
                         std::to_string(k));
    }
  }
  return unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T out) {
        if (out == T{0}) throw NumericError("sqrt: gradient undefined at 0");
        return T{0.5} / out;
      });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T out) { return out * (T{1} - out); });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  return unary<T>(
      "leaky_relu", x, [slope](T v) { return v < T{0} ? slope * v : v; },
      [slope](T v, T) { return v < T{0} ? slope : T{1}; }, true);
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary<T>(
      "relu", x, [](T v) { return v < T{0} ? T{0} : v; },
      [](T v, T) { return v < T{0} ? T{0} : T{1}; }, true);
}

template <typename T>
Var<T> square(Var<T> x) {
  return unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

template <typename T>
Var<T> abs(Var<T> x) {
  return unary<T>(
      "abs", x, [](T v) { return std::abs(v); }, [](T v, T) { return v < T{0} ? T{-1} : T{1}; }, true);
}

template <typename T>
Var<T> softmax_channels(Var<T> logits) {
  Graph<T>& g = graph_of(logits);
  const Tensor<T>& in = logits.value();
  const Shape s = in.shape();
  if (s.c < 2) throw ConfigError("softmax_channels: need at least 2 channels, got " + s.str());
  Tensor<T> out(s);
  const std::size_t plane = s.plane_size();
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      T m = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < s.c; ++c) m = std::max(m, in[base + c * plane + p]);
      T z{0};
      for (int c = 0; c < s.c; ++c) {
        const T e = std::exp(in[base + c * plane + p] - m);
        out[base + c * plane + p] = e;
        z += e;
      }
      for (int c = 0; c < s.c; ++c) out[base + c * plane + p] /= z;
    }
  }
  return g.record("softmax_channels", {logits}, std::move(out), [s](BackwardContext<T>& ctx) {
    const std::size_t plane = s.plane_size();
    const auto& y = ctx.output;
    const auto& go = ctx.grad_output;
    auto& gi = *ctx.input_grads[0];
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        T dot{0};
        for (int c = 0; c < s.c; ++c) dot += go[base + c * plane + p] * y[base + c * plane + p];
        for (int c = 0; c < s.c; ++c) {
          const std::size_t i = base + c * plane + p;
          gi[i] += y[i] * (go[i] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> box_mean(Var<T> x, int radius) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& in = x.value();
  const Shape s = in.shape();
  if (radius < 0 || radius >= std::min(s.h, s.w)) {
    throw ConfigError("box_mean: radius " + std::to_string(radius) +
                      " must be non-negative and below min(height, width) of " + s.str());
  }
  Tensor<T> out(s);
  std::vector<T> tmp, prefix;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = in.index(n, c, 0, 0);
      box_sum_plane(in.data() + off, out.data() + off, s.h, s.w, radius, tmp, prefix);
      for (int y = 0; y < s.h; ++y) {
        const int cy = window_count(y, s.h, radius);
        for (int xx = 0; xx < s.w; ++xx) {
          out[off + static_cast<std::size_t>(y) * s.w + xx] /=
              static_cast<T>(cy * window_count(xx, s.w, radius));
        }
      }
    }
  }
  return g.record("box_mean", {x}, std::move(out), [s, radius](BackwardContext<T>& ctx) {
    // Adjoint of (box_sum then divide by count) is (divide by count then box_sum).
    std::vector<T> scaled(s.plane_size()), summed(s.plane_size()), tmp, prefix;
    auto& gi = *ctx.input_grads[0];
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const std::size_t off = ctx.grad_output.index(n, c, 0, 0);
        for (int y = 0; y < s.h; ++y) {
          const int cy = window_count(y, s.h, radius);
          for (int xx = 0; xx < s.w; ++xx) {
            const std::size_t i = static_cast<std::size_t>(y) * s.w + xx;
            scaled[i] = ctx.grad_output[off + i] / static_cast<T>(cy * window_count(xx, s.w, radius));
          }
        }
        box_sum_plane(scaled.data(), summed.data(), s.h, s.w, radius, tmp, prefix);
        for (std::size_t i = 0; i < summed.size(); ++i) gi[off + i] += summed[i];
      }
    }
  });
}

template <typename T>
Var<T> center_planes(Var<T> x) {
  Graph<T>& g = graph_of(x);
  Tensor<T> out = x.value();
  const Shape s = out.shape();
  if (s.plane_size() == 0) throw ConfigError("center_planes: empty planes");
  const T inv = T{1} / static_cast<T>(s.plane_size());
  auto center = [inv](std::span<T> p) {
    T acc{0};
    for (const T v : p) acc += v;
    const T m = acc * inv;
    for (T& v : p) v -= m;
  };
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) center(out.plane(n, c));
  }
  return g.record("center_planes", {x}, std::move(out), [s, center](BackwardContext<T>& ctx) {
    // The map is a symmetric projection, so the gradient is projected the same way.
    Tensor<T> go = ctx.grad_output;
    Tensor<T>& gi = *ctx.input_grads[0];
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        center(go.plane(n, c));
        auto src = go.plane(n, c);
        auto dst = gi.plane(n, c);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  Graph<T>& g = graph_of(x);
  T acc{0};
  for (const T v : x.value().values()) acc += v;
  return g.record("sum", {x}, Tensor<T>::scalar(acc), [](BackwardContext<T>& ctx) {
    const T go = ctx.grad_output[0];
    for (auto& v : ctx.input_grads[0]->values()) v += go;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  Graph<T>& g = graph_of(x);
  const std::size_t n = x.value().size();
  if (n == 0) throw ConfigError("mean: empty tensor");
  T acc{0};
  for (const T v : x.value().values()) acc += v;
  return g.record("mean", {x}, Tensor<T>::scalar(acc / static_cast<T>(n)),
                  [n](BackwardContext<T>& ctx) {
                    const T go = ctx.grad_output[0] / static_cast<T>(n);
                    for (auto& v : ctx.input_grads[0]->values()) v += go;
                  });
}

template <typename T>
Var<T> max_over_channels(Var<T> x) {
  Graph<T>& g = graph_of(x);
  const Tensor<T>& in = x.value();
  const Shape s = in.shape();
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  std::vector<int> arg(out.size(), 0);
  const std::size_t plane = s.plane_size();
  std::uint64_t h = 1;
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + p;
      int best = 0;
      for (int c = 1; c < s.c; ++c) {
        if (in[base + c * plane] > in[base + best * plane]) best = c;
      }
      out[n * plane + p] = in[base + best * plane];
      arg[n * plane + p] = best;
      if (g.track_branches()) h = mix_branch(h, static_cast<std::uint64_t>(best));
    }
  }
  return g.record(
      "max_over_channels", {x}, std::move(out),
      [s, arg = std::move(arg)](BackwardContext<T>& ctx) {
        const std::size_t plane = s.plane_size();
        auto& gi = *ctx.input_grads[0];
        for (int n = 0; n < s.n; ++n) {
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t o = n * plane + p;
            gi[static_cast<std::size_t>(n) * s.c * plane + arg[o] * plane + p] += ctx.grad_output[o];
          }
        }
      },
      g.track_branches() ? h : 0);
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  Graph<T>& g = graph_of(parts.front());
  const Shape s0 = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    graph_of(parts.front(), p);
    const Shape s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ConfigError("concat_channels: shape mismatch " + s.str() + " vs " + s0.str());
    }
    channels += s.c;
  }
  Tensor<T> out(Shape{s0.n, channels, s0.h, s0.w});
  std::vector<int> offsets;
  const std::size_t plane = s0.plane_size();
  int c0 = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    for (int n = 0; n < s0.n; ++n) {
      std::copy_n(v.data() + v.index(n, 0, 0, 0), v.shape().c * plane,
                  out.data() + out.index(n, c0, 0, 0));
    }
    offsets.push_back(c0);
    c0 += v.shape().c;
  }
  return g.record("concat_channels", parts, std::move(out),
                  [offsets, channels](BackwardContext<T>& ctx) {
                    const Shape s = ctx.grad_output.shape();
                    const std::size_t plane = s.plane_size();
                    for (std::size_t i = 0; i < ctx.inputs.size(); ++i) {
                      Tensor<T>* gi = ctx.input_grads[i];
                      if (gi == nullptr) continue;
                      const int ci = gi->shape().c;
                      for (int n = 0; n < s.n; ++n) {
                        const T* src = ctx.grad_output.data() +
                                       (static_cast<std::size_t>(n) * channels + offsets[i]) * plane;
                        T* dst = gi->data() + gi->index(n, 0, 0, 0);
                        for (std::size_t k = 0; k < ci * plane; ++k) dst[k] += src[k];
                      }
                    }
                  });
}

template <typename T>
Var<T> slice_channels(Var<T> x, int first, int count) {
  Graph<T>& g = graph_of(x);
  const Shape s = x.shape();
  if (first < 0 || count < 1 || first + count > s.c) {
    throw ConfigError("slice_channels: range out of bounds for " + s.str());
  }
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  const std::size_t plane = s.plane_size();
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(x.value().data() + x.value().index(n, first, 0, 0), count * plane,
                out.data() + out.index(n, 0, 0, 0));
  }
  return g.record("slice_channels", {x}, std::move(out), [s, first, count](BackwardContext<T>& ctx) {
    const std::size_t plane = s.plane_size();
    auto& gi = *ctx.input_grads[0];
    for (int n = 0; n < s.n; ++n) {
      const T* src = ctx.grad_output.data() + static_cast<std::size_t>(n) * count * plane;
      T* dst = gi.data() + gi.index(n, first, 0, 0);
      for (std::size_t k = 0; k < count * plane; ++k) dst[k] += src[k];
    }
  });
}

template <typename T>
Var<T> affine_channels(Var<T> x, Var<T> scale_v, Var<T> shift_v) {
  Graph<T>& g = graph_of(x, scale_v);
  graph_of(x, shift_v);
  const Shape s = x.shape();
  if (scale_v.value().size() != static_cast<std::size_t>(s.c) ||
      shift_v.value().size() != static_cast<std::size_t>(s.c)) {
    throw ConfigError("affine_channels: scale/shift must have one entry per channel of " + s.str());
  }
  Tensor<T> out(s);
  const std::size_t plane = s.plane_size();
  const Tensor<T>& in = x.value();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T a = scale_v.value()[c];
      const T b = shift_v.value()[c];
      const std::size_t off = in.index(n, c, 0, 0);
      for (std::size_t p = 0; p < plane; ++p) out[off + p] = a * in[off + p] + b;
    }
  }
  return g.record("affine_channels", {x, scale_v, shift_v}, std::move(out),
                  [s](BackwardContext<T>& ctx) {
                    const std::size_t plane = s.plane_size();
                    const auto& in = *ctx.inputs[0];
                    const auto& a = *ctx.inputs[1];
                    for (int n = 0; n < s.n; ++n) {
                      for (int c = 0; c < s.c; ++c) {
                        const std::size_t off = in.index(n, c, 0, 0);
                        T ga{0}, gb{0};
                        for (std::size_t p = 0; p < plane; ++p) {
                          const T go = ctx.grad_output[off + p];
                          ga += go * in[off + p];
                          gb += go;
                          if (ctx.input_grads[0]) (*ctx.input_grads[0])[off + p] += go * a[c];
                        }
                        if (ctx.input_grads[1]) (*ctx.input_grads[1])[c] += ga;
                        if (ctx.input_grads[2]) (*ctx.input_grads[2])[c] += gb;
                      }
                    }
                  });
}

template <typename T>
Var<T> max_pool2x2(Var<T> x) {
  Graph<T>& g = graph_of(x);
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ConfigError("max_pool2x2: spatial size must be even, got " + s.str());
  }
  const Tensor<T>& in = x.value();
  Tensor<T> out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  std::vector<std::size_t> arg(out.size());
  std::uint64_t h = 1;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h / 2; ++y) {
        for (int xx = 0; xx < s.w / 2; ++xx) {
          std::size_t best = in.index(n, c, 2 * y, 2 * xx);
          for (int k = 1; k < 4; ++k) {
            const std::size_t i = in.index(n, c, 2 * y + k / 2, 2 * xx + k % 2);
            if (in[i] > in[best]) best = i;
          }
          const std::size_t o = out.index(n, c, y, xx);
          out[o] = in[best];
          arg[o] = best;
          if (g.track_branches()) h = mix_branch(h, best);
        }
      }
    }
  }
  return g.record(
      "max_pool2x2", {x}, std::move(out),
      [arg = std::move(arg)](BackwardContext<T>& ctx) {
        auto& gi = *ctx.input_grads[0];
        for (std::size_t o = 0; o < arg.size(); ++o) gi[arg[o]] += ctx.grad_output[o];
      },
      g.track_branches() ? h : 0);
}

template <typename T>
Var<T> upsample_nearest2x(Var<T> x) {
  Graph<T>& g = graph_of(x);
  const Shape s = x.shape();
  const Tensor<T>& in = x.value();
  Tensor<T> out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < 2 * s.h; ++y) {
        for (int xx = 0; xx < 2 * s.w; ++xx) out(n, c, y, xx) = in(n, c, y / 2, xx / 2);
      }
    }
  }
  return g.record("upsample_nearest2x", {x}, std::move(out), [s](BackwardContext<T>& ctx) {
    auto& gi = *ctx.input_grads[0];
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        for (int y = 0; y < 2 * s.h; ++y) {
          for (int xx = 0; xx < 2 * s.w; ++xx) gi(n, c, y / 2, xx / 2) += ctx.grad_output(n, c, y, xx);
        }
      }
    }
  });
}

namespace {
inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}
}  // namespace

template <typename T>
Var<T> pad_reflect(Var<T> x, int top, int bottom, int left, int right) {
  Graph<T>& g = graph_of(x);
  const Shape s = x.shape();
  if (top < 0 || bottom < 0 || left < 0 || right < 0 || std::max(top, bottom) >= s.h ||
      std::max(left, right) >= s.w) {
    throw ConfigError("pad_reflect: padding must be non-negative and smaller than " + s.str());
  }
  const Shape os{s.n, s.c, s.h + top + bottom, s.w + left + right};
  const Tensor<T>& in = x.value();
  Tensor<T> out(os);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < os.h; ++y) {
        const int sy = reflect101(y - top, s.h);
        for (int xx = 0; xx < os.w; ++xx) out(n, c, y, xx) = in(n, c, sy, reflect101(xx - left, s.w));
      }
    }
  }
  return g.record("pad_reflect", {x}, std::move(out), [s, os, top, left](BackwardContext<T>& ctx) {
    auto& gi = *ctx.input_grads[0];
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        for (int y = 0; y < os.h; ++y) {
          const int sy = reflect101(y - top, s.h);
          for (int xx = 0; xx < os.w; ++xx) {
            gi(n, c, sy, reflect101(xx - left, s.w)) += ctx.grad_output(n, c, y, xx);
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> crop(Var<T> x, int top, int left, int height, int width) {
  Graph<T>& g = graph_of(x);
  const Shape s = x.shape();
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > s.h || left + width > s.w) {
    throw ConfigError("crop: window out of bounds for " + s.str());
  }
  const Tensor<T>& in = x.value();
  Tensor<T> out(Shape{s.n, s.c, height, width});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < height; ++y) {
        for (int xx = 0; xx < width; ++xx) out(n, c, y, xx) = in(n, c, top + y, left + xx);
      }
    }
  }
  return g.record("crop", {x}, std::move(out), [top, left](BackwardContext<T>& ctx) {
    auto& gi = *ctx.input_grads[0];
    const Shape os = ctx.grad_output.shape();
    for (int n = 0; n < os.n; ++n) {
      for (int c = 0; c < os.c; ++c) {
        for (int y = 0; y < os.h; ++y) {
          for (int xx = 0; xx < os.w; ++xx) gi(n, c, top + y, left + xx) += ctx.grad_output(n, c, y, xx);
        }
      }
    }
  });
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw ConfigError("mse: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  return mean(square(sub(a, b)));
}

#define VK_INSTANTIATE_OPS(T)                                                            \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, ConvOptions);            \
  template Var<T> add(Var<T>, Var<T>);                                                   \
  template Var<T> sub(Var<T>, Var<T>);                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                   \
  template Var<T> div(Var<T>, Var<T>, T);                                                \
  template Var<T> add_scalar(Var<T>, T);                                                 \
  template Var<T> scale(Var<T>, T);                                                      \
  template Var<T> exp(Var<T>);                                                           \
  template Var<T> sqrt(Var<T>);                                                          \
  template Var<T> sigmoid(Var<T>);                                                       \
  template Var<T> leaky_relu(Var<T>, T);                                                 \
  template Var<T> relu(Var<T>);                                                          \
  template Var<T> square(Var<T>);                                                        \
  template Var<T> abs(Var<T>);                                                           \
  template Var<T> softmax_channels(Var<T>);                                              \
  template Var<T> box_mean(Var<T>, int);                                                 \
  template Var<T> center_planes(Var<T>);                                                 \
  template Var<T> sum(Var<T>);                                                           \
  template Var<T> mean(Var<T>);                                                          \
  template Var<T> max_over_channels(Var<T>);                                             \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                           \
  template Var<T> slice_channels(Var<T>, int, int);                                      \
  template Var<T> affine_channels(Var<T>, Var<T>, Var<T>);                               \
  template Var<T> max_pool2x2(Var<T>);                                                   \
  template Var<T> upsample_nearest2x(Var<T>);                                            \
  template Var<T> pad_reflect(Var<T>, int, int, int, int);                               \
  template Var<T> crop(Var<T>, int, int, int, int);                                      \
  template Var<T> mse(Var<T>, Var<T>);

VK_INSTANTIATE_OPS(float)
VK_INSTANTIATE_OPS(double)

}  // namespace vk
