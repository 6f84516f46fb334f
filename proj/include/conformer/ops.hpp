#pragma once

#include <optional>
#include <vector>

#include "conformer/tape.hpp"
#include "conformer/tensor.hpp"

namespace conformer {

// Free-function ops. Inputs are read-only; each call allocates its outputs.
// Passing a Tape records the backward step for that call. Binary elementwise
// ops broadcast numpy-style.

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double s, Tape* tape = nullptr);
Tensor relu(const Tensor& x, Tape* tape = nullptr);
// Exact erf form: 0.5 x (1 + erf(x / sqrt(2))).
Tensor gelu(const Tensor& x, Tape* tape = nullptr);

// ---- matmul family ----
// a: [..., M, K], b: [..., K, N] (or [..., N, K] with trans_b). Leading batch
// dims broadcast; a missing batch dim counts as 1.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b = false, Tape* tape = nullptr);
// x: [..., in], w: [out, in], bias: [out] (optional). Returns [..., out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias, Tape* tape = nullptr);

// ---- convolution and pooling (NCHW) ----
// x: [N, Cin, H, W], w: [Cout, Cin, kh, kw], bias: [Cout] optional.
// Symmetric zero padding, no dilation, no groups.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int padding,
              Tape* tape = nullptr);

enum class PoolKind { max, avg };
// Padding cells count as -inf for max pooling; average pooling always divides
// by the full kernel area, padded positions contributing zero.
Tensor pool2d(const Tensor& x, PoolKind kind, int kernel, int stride, int padding,
              Tape* tape = nullptr);
Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding, Tape* tape = nullptr);
Tensor avg_pool2d(const Tensor& x, int kernel, int stride, int padding, Tape* tape = nullptr);

// Nearest-neighbour resampling to (out_h, out_w): src index = floor(dst * in / out).
Tensor resample_nearest(const Tensor& x, int out_h, int out_w, Tape* tape = nullptr);

// ---- normalization and softmax ----
Tensor softmax(const Tensor& x, int axis, Tape* tape = nullptr);
// Normalizes the last axis; gamma/beta shaped [last_dim].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  Tape* tape = nullptr);
// NCHW batch norm. In training mode batch statistics normalize and the running
// buffers are updated in place (biased variance normalizes, unbiased updates
// the running estimate); in eval mode the running buffers normalize.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double eps, double momentum,
                  Tape* tape = nullptr);

// ---- shape ----
Tensor reshape(const Tensor& x, std::vector<int64_t> shape, Tape* tape = nullptr);
Tensor permute(const Tensor& x, std::vector<int> perm, Tape* tape = nullptr);
Tensor concat(const std::vector<Tensor>& xs, int axis, Tape* tape = nullptr);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length, Tape* tape = nullptr);

// ---- reductions ----
Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdim, Tape* tape = nullptr);
Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdim, Tape* tape = nullptr);
Tensor sum_all(const Tensor& x, Tape* tape = nullptr);  // scalar, shape []

// ---- loss ----
// logits: [N, C]; labels: N class indices in [0, C). Mean over the batch of
// -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tape* tape = nullptr);

// ---- misc ----
// Per-row argmax of a [N, C] tensor.
std::vector<int> argmax_rows(const Tensor& logits);
bool all_finite(const Tensor& t);

}  // namespace conformer
