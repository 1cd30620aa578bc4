#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "graphreason/geometry.hpp"
#include "graphreason/tensor.hpp"

// Differentiable operations. Each op records its adjoint on the active tape
// when a tape is active and at least one input requires grad.
namespace graphreason::ops {

enum class Activation { kRelu, kSigmoid, kTanh, kIdentity };
Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

// Linear algebra and elementwise arithmetic.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);
Tensor add_scalar(const Tensor& a, Scalar value);
Tensor one_minus(const Tensor& a);
Tensor negate(const Tensor& a);
// a[..., n] + bias[n]
Tensor add_bias(const Tensor& a, const Tensor& bias);
// Sum of a list of same-shape tensors.
Tensor add_n(std::span<const Tensor> terms);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor activate(const Tensor& x, Activation kind);

// Structural ops.
Tensor reshape(const Tensor& a, Shape shape);
// Concatenate along the last axis; leading extents must match.
Tensor concat_last(const Tensor& a, const Tensor& b);
// Columns [begin, end) of the last axis.
Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end);
// [R x K] -> [R x times x K]
Tensor repeat_rows(const Tensor& a, std::size_t times);
// [R x M x K] -> [R x K], averaging over the middle axis
Tensor mean_middle(const Tensor& a);
// [R x N] -> [R]
Tensor column(const Tensor& a, std::size_t j);
// N tensors of shape [R] -> [R x N]
Tensor stack_columns(std::span<const Tensor> columns);
// a[r, :] * w[r]
Tensor scale_rows(const Tensor& a, const Tensor& w);
// Values of a are passed through but no gradient flows back.
Tensor stop_gradient(const Tensor& a);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sum of w[r] * a[r, index[r]].
Tensor weighted_pick(const Tensor& a, std::span<const std::size_t> index, std::span<const Scalar> w);

// Row-wise soft-max over the last axis of a 2-D tensor (1-D treated as one row).
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

struct SoftmaxXent {
  Tensor probs;
  Tensor loss;
};
SoftmaxXent softmax_xent(const Tensor& logits, std::size_t target);

// Stride-1 same-size zero-padded cross-correlation:
// input [H x W x Cin], kernel [k x k x Cin x Cout], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

// Bilinear crop of an [H x W x D] map. Boxes are in map-cell units where
// cell (y, x) spans [x, x+1) x [y, y+1). The output sample grid maps its
// corner samples onto the centers of the box's corner cells, so a full-map
// box at the map's own size is the identity. Boxes are clipped to the map.
Tensor crop_and_resize(const Tensor& map, const Box& box, std::size_t out_h, std::size_t out_w);
// Batched form: [R x out_h x out_w x D].
Tensor crop_and_resize(const Tensor& map, std::span<const Box> boxes, std::size_t out_h, std::size_t out_w);

// Writes resized patches [R x h x w x D] back into memory [H x W x D]:
//   new(c) = (sum_r g_rc v_r(c) + (1 - min(1, sum_r g_rc)) old(c)) / max(1, sum_r g_rc)
// where v_r(c) resamples patch r at cell c with edge extrapolation.
Tensor paste_back(const Tensor& memory, std::span<const Box> boxes, const Tensor& patches,
                  const CoverageWeights& coverage);

// Test hook: multiplies the adjoint of the named op by `factor` until cleared.
void corrupt_adjoint(std::string_view op, Scalar factor);
void clear_adjoint_corruption();

}  // namespace graphreason::ops
