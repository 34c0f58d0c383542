#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "darht/tape.hpp"

namespace darht {

// Differentiable primitives. Every op records its output on the tape of its
// inputs and validates shapes eagerly. Reductions accumulate in double.

// [m x k] . [k x n] -> [m x n]
Var matmul(Var a, Var b);

// [m x n] + bias[n], bias broadcast over rows.
Var add_bias(Var x, Var bias);

// [C x H x W] or [B x C x H x W] plus per-channel bias[C].
Var add_channel_bias(Var x, Var bias);

// Valid-padding cross-correlation. input [C x H x W] or [B x C x H x W],
// kernels [O x C x kh x kw].
Var conv2d(Var input, Var kernels, std::size_t stride);

Var relu(Var x);
Var reshape(Var x, Shape shape);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise, same shape
Var scale(Var x, float factor);
// Elementwise max(x, floor); gradient flows only where x > floor.
Var maximum(Var x, float floor);
Var square(Var x);

// Softmax / log-softmax over the last axis of a rank-1 or rank-2 tensor.
Var softmax(Var logits);
Var log_softmax(Var logits);
// log(max(x, floor)); gradient is zero where clamped.
Var log_clamped(Var x, float floor);

Var sum(Var x);   // -> [1]
Var mean(Var x);  // -> [1]
// [B x N] -> [B]
Var row_sum(Var x);
// [B x N] -> [B x (end - begin)]
Var slice_cols(Var x, std::size_t begin, std::size_t end);
// [B x K], one index per row -> [B]
Var pick(Var x, std::span<const std::size_t> index);
// Elementwise mean of equally shaped vars.
Var average(std::span<const Var> xs);

// Per-row cross-entropy of integer labels against logits via log-sum-exp.
// [B x K] -> [B]
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

// Value-level helpers (no tape).
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);
Tensor matmul(const Tensor& a, const Tensor& b);
std::vector<std::size_t> argmax_rows(const Tensor& x);

}  // namespace darht
