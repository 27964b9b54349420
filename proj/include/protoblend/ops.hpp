#pragma once

#include <cstddef>
#include <vector>

#include "protoblend/graph.hpp"

// Differentiable op vocabulary. Image tensors are NCHW. Every op records
// itself on the inputs' graph when any input requires grad and carries a
// hand-written adjoint.
namespace protoblend::ops {

// Elementwise, identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var exp(Var a);
// log(max(a, floor)); the gradient is zero where a < floor.
Var log(Var a, double floor = 1e-12);
Var square(Var a);

Var reshape(Var a, Shape shape);

// Reductions to a 1-element tensor.
Var sum(Var a);
Var mean(Var a);
// [N, C, ...] -> [C], summing every axis except axis 1.
Var channel_sum(Var a);

// [M, K] x [K, N] -> [M, N].
Var matmul(Var a, Var b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};
// x: [N, Cin, H, W], w: [Cout, Cin, kh, kw], bias: [Cout] (optional, pass an
// invalid Var{} to omit). Output extent: (H + 2p - kh) / stride + 1.
Var conv2d(Var x, Var w, Var bias, Conv2dOptions opt = {});
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

// Max pooling with window k and the given stride, no padding. Ties resolve to
// the first maximum in raster order.
Var max_pool2d(Var x, std::size_t kernel, std::size_t stride);
Var upsample_nearest(Var x, std::size_t factor);
Var concat_channels(Var a, Var b);
// Rows [begin, end) of axis 0, and the inverse stacking along axis 0.
Var slice_batch(Var x, std::size_t begin, std::size_t end);
Var concat_batch(Var a, Var b);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};
// Per-channel batch normalization over (N, H, W). In training mode the batch
// statistics normalize the input and the running statistics are updated as
// running = momentum * running + (1 - momentum) * batch (unbiased variance).
// In evaluation mode the running statistics are used and the state is
// untouched.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, bool training, double momentum = 0.9,
               double eps = 1e-5);

// Softmax / log-softmax along axis 1 of an [N, C, ...] tensor.
Var softmax_channels(Var x);
Var log_softmax_channels(Var x);
// Divides each pixel's channel vector by max(||v||, eps).
Var l2_normalize_channels(Var x, double eps = 1e-12);
// [N, C, H, W] -> [N*H*W, C], rows in (n, i, j) raster order.
Var nchw_to_rows(Var x);

// Mean over rows with label >= 0 of -log softmax(logits)[row, label].
// Rows labeled -1 are ignored; returns 0 when every row is ignored.
Var softmax_cross_entropy_rows(Var logits, const std::vector<int>& labels);
// Mean over pixels of -log(max(P[n, label, i, j], floor)) for P: [N, C, H, W]
// and labels of length N*H*W.
Var nll_probs(Var probs, const std::vector<int>& labels, double floor = 1e-12);

// Spatial permutations on the last two axes.
Var flip(Var x, int axis);  // axis: -1 horizontal (columns), -2 vertical (rows)
Var rot90(Var x, int k);    // counter-clockwise quarter turns

}  // namespace protoblend::ops
