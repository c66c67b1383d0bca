#pragma once

// Differentiable tensor operations. Every function records one node on the
// graph owning its inputs and registers the analytic backward rule.
//
// Convolutions are cross-correlations (the usual conv-layer convention).
// Binary pointwise ops accept equal shapes or a single-element operand that is
// broadcast; no other broadcasting is supported.

#include <optional>
#include <vector>

#include "vesselkit/graph.hpp"

namespace vk {

struct ConvOptions {
  int stride = 1;
  int dilation = 1;
  int padding = 0;

  /// Zero padding that keeps the spatial size for an odd kernel at stride 1.
  static ConvOptions same(int kernel_size, int dilation = 1) {
    return ConvOptions{1, dilation, dilation * (kernel_size - 1) / 2};
  }
};

/// input (N,Cin,H,W), kernel (Cout,Cin,kh,kw), bias (1,Cout,1,1) or absent.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::optional<Var<T>> bias, ConvOptions opts);

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
/// Throws NumericError when |b| <= guard anywhere.
template <typename T> Var<T> div(Var<T> a, Var<T> b, T guard = T{0});

template <typename T> Var<T> add_scalar(Var<T> x, T c);
template <typename T> Var<T> scale(Var<T> x, T c);

template <typename T> Var<T> exp(Var<T> x);
/// Throws NumericError on negative input.
template <typename T> Var<T> sqrt(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> leaky_relu(Var<T> x, T slope);
template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> square(Var<T> x);
template <typename T> Var<T> abs(Var<T> x);

/// Per-pixel softmax across channels (C >= 2), max-subtracted.
template <typename T> Var<T> softmax_channels(Var<T> logits);

/// Mean over the (2r+1)^2 window, border windows normalized by their in-image count.
template <typename T> Var<T> box_mean(Var<T> x, int radius);

/// Subtracts from every (n, c) plane its mean.
template <typename T> Var<T> center_planes(Var<T> x);

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
/// (N,C,H,W) -> (N,1,H,W); gradient goes to the first maximal channel.
template <typename T> Var<T> max_over_channels(Var<T> x);

template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(Var<T> x, int first, int count);

/// y = scale[c] * x + shift[c]; scale and shift have shape (1,C,1,1).
template <typename T> Var<T> affine_channels(Var<T> x, Var<T> scale, Var<T> shift);

template <typename T> Var<T> max_pool2x2(Var<T> x);
template <typename T> Var<T> upsample_nearest2x(Var<T> x);
/// Mirror padding without edge repetition (reflect101); pad < dimension.
template <typename T> Var<T> pad_reflect(Var<T> x, int top, int bottom, int left, int right);
template <typename T> Var<T> crop(Var<T> x, int top, int left, int height, int width);

/// Mean squared difference of two equally-shaped tensors.
template <typename T> Var<T> mse(Var<T> a, Var<T> b);

}  // namespace vk
