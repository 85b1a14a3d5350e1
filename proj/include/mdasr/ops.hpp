#pragma once

// Differentiable tensor ops. Matrices are [rows x cols]; vectors used as
// broadcast rows (biases, gains) have shape [cols].

#include <span>
#include <vector>

#include "mdasr/autograd.hpp"
#include "mdasr/kernels.hpp"

namespace mdasr {

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

// a[m x n] + bias[n] broadcast over rows.
template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T s);

template <typename T>
Var<T> gelu(const Var<T>& a);

template <typename T>
Var<T> sum(const Var<T>& a);

// Softmax along the last axis, computed with max subtraction.
template <typename T>
Var<T> softmax(const Var<T>& x);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = static_cast<T>(kLayerNormEps));

// softmax(q k^T / sqrt(d_head) + mask) v, split over heads. q is [tq x d],
// k and v are [tk x d].
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const AttentionMask& mask, int heads = 1);

// weight * sum over selected rows of -log softmax(logits_i)[target_i].
// An empty selection yields a zero loss.
template <typename T>
Var<T> cross_entropy_masked(const Var<T>& logits, std::span<const int> targets, const std::vector<bool>& select,
                            T weight);

// Rows of table selected by ids (embedding lookup).
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const int> ids);

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);

template <typename T>
Var<T> slice_rows(const Var<T>& x, int begin, int end);

// Temporal windows for a strided 1-D convolution: output row i is the
// concatenation of input rows [i*stride, i*stride + kernel). The output has
// floor((T - kernel) / stride) + 1 rows and kernel * cols columns.
template <typename T>
Var<T> conv_windows(const Var<T>& x, int kernel, int stride);

inline int conv_output_length(int length, int kernel, int stride) {
  if (length < kernel) throw DimensionError("sequence of length " + std::to_string(length) +
                                            " is shorter than the kernel (" + std::to_string(kernel) + ")");
  return (length - kernel) / stride + 1;
}

}  // namespace mdasr
