#pragma once

// Dense compute kernels. The functions in mdasr::kernels are OpenMP-parallel
// over independent output rows (or heads), so results do not depend on the
// thread count. mdasr::kernels::reference holds straightforward serial
// versions used by the tests and the benchmark as a baseline.

#include <cstddef>
#include <string>

namespace mdasr {

// Which keys a query row may attend to. Query row i sits at absolute position
// query_offset + i in the key sequence.
struct AttentionMask {
  enum class Kind { kFull, kCausal, kPrefix };
  Kind kind = Kind::kFull;
  int query_offset = 0;
  int prefix_len = 0;  // kPrefix: keys below this are visible to every query

  static AttentionMask full() { return {}; }
  static AttentionMask causal(int offset = 0) { return {Kind::kCausal, offset, 0}; }
  static AttentionMask prefix(int prefix_len, int offset = 0) { return {Kind::kPrefix, offset, prefix_len}; }

  bool visible(int query, int key) const {
    switch (kind) {
      case Kind::kFull:
        return true;
      case Kind::kCausal:
        return key <= query + query_offset;
      case Kind::kPrefix:
        return key < prefix_len || key <= query + query_offset;
    }
    return false;
  }
};

struct AttentionShape {
  int tq = 0;     // query rows
  int tk = 0;     // key/value rows
  int dim = 0;    // model width (all heads)
  int heads = 1;
  int head_dim() const { return dim / heads; }
};

namespace kernels {

// c[m x n] = op(a) * op(b) (+ c when accumulate). a is [m x k] or, transposed,
// [k x m]; b is [k x n] or, transposed, [n x k].
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

template <typename T>
void softmax_rows(const T* x, T* y, int rows, int cols);

// probs receives the [heads x tq x tk] attention weights (zero where masked).
template <typename T>
void attention_forward(const T* q, const T* k, const T* v, const AttentionShape& shape, const AttentionMask& mask,
                       T* out, T* probs);

// Accumulates into dq, dk, dv.
template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs, const T* dout,
                        const AttentionShape& shape, T* dq, T* dk, T* dv);

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

template <typename T>
void attention_forward(const T* q, const T* k, const T* v, const AttentionShape& shape, const AttentionMask& mask,
                       T* out, T* probs);

}  // namespace reference

// Number of OpenMP threads the kernels will use (1 without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace kernels
}  // namespace mdasr
