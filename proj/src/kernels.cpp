#include "mdasr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace mdasr::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 15;

template <typename T>
std::vector<T> transposed(const T* src, int rows, int cols) {
  std::vector<T> out(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
  return out;
}

// c[m x n] (+)= a[m x k] * b[k x n]; rows of c are independent.
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  const long work = static_cast<long>(m) * n * k;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T aip = arow[p];
      const T* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c[m x n] (+)= a[k x m]^T * b[k x n].
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  const long work = static_cast<long>(m) * n * k;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    for (int p = 0; p < k; ++p) {
      const T api = a[static_cast<std::size_t>(p) * m + i];
      const T* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (trans_b) {
    const std::vector<T> bt = transposed(b, n, k);
    gemm<T>(trans_a, false, m, n, k, a, bt.data(), c, accumulate);
    return;
  }
  if (trans_a)
    gemm_tn(m, n, k, a, b, c, accumulate);
  else
    gemm_nn(m, n, k, a, b, c, accumulate);
}

template <typename T>
void softmax_rows(const T* x, T* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::size_t>(r) * cols;
    T* yr = y + static_cast<std::size_t>(r) * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T sum = 0;
    for (int c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    const T inv = T{1} / sum;
    for (int c = 0; c < cols; ++c) yr[c] *= inv;
  }
}

namespace {

template <typename T>
void attention_row(const T* q, const T* k, const T* v, const AttentionShape& s, const AttentionMask& mask, int h,
                   int i, T* out, T* probs) {
  const int hd = s.head_dim();
  const int off = h * hd;
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  T* p = probs + (static_cast<std::size_t>(h) * s.tq + i) * s.tk;
  const T* qi = q + static_cast<std::size_t>(i) * s.dim + off;
  T mx = -std::numeric_limits<T>::infinity();
  bool any = false;
  for (int j = 0; j < s.tk; ++j) {
    if (!mask.visible(i, j)) {
      p[j] = 0;
      continue;
    }
    const T* kj = k + static_cast<std::size_t>(j) * s.dim + off;
    T dot = 0;
    for (int d = 0; d < hd; ++d) dot += qi[d] * kj[d];
    p[j] = dot * scale;
    mx = any ? std::max(mx, p[j]) : p[j];
    any = true;
  }
  if (!any) throw std::runtime_error("attention: query row " + std::to_string(i) + " has no visible keys");
  T sum = 0;
  for (int j = 0; j < s.tk; ++j) {
    if (!mask.visible(i, j)) continue;
    p[j] = std::exp(p[j] - mx);
    sum += p[j];
  }
  const T inv = T{1} / sum;
  T* oi = out + static_cast<std::size_t>(i) * s.dim + off;
  std::fill(oi, oi + hd, T{0});
  for (int j = 0; j < s.tk; ++j) {
    if (!mask.visible(i, j)) continue;
    p[j] *= inv;
    const T* vj = v + static_cast<std::size_t>(j) * s.dim + off;
    for (int d = 0; d < hd; ++d) oi[d] += p[j] * vj[d];
  }
}

}  // namespace

template <typename T>
void attention_forward(const T* q, const T* k, const T* v, const AttentionShape& s, const AttentionMask& mask,
                       T* out, T* probs) {
  if (s.heads <= 0 || s.dim % s.heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
  const int tasks = s.heads * s.tq;
  const long work = static_cast<long>(tasks) * s.tk * s.head_dim();
  // Exceptions must not escape the parallel region; validate visibility first.
  for (int i = 0; i < s.tq; ++i) {
    bool any = false;
    for (int j = 0; j < s.tk && !any; ++j) any = mask.visible(i, j);
    if (!any) throw std::runtime_error("attention: query row " + std::to_string(i) + " has no visible keys");
  }
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int task = 0; task < tasks; ++task) attention_row(q, k, v, s, mask, task / s.tq, task % s.tq, out, probs);
}

template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs, const T* dout, const AttentionShape& s,
                        T* dq, T* dk, T* dv) {
  const int hd = s.head_dim();
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  const long work = static_cast<long>(s.heads) * s.tq * s.tk * hd;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int h = 0; h < s.heads; ++h) {
    const int off = h * hd;
    std::vector<T> dp(s.tk);
    for (int i = 0; i < s.tq; ++i) {
      const T* p = probs + (static_cast<std::size_t>(h) * s.tq + i) * s.tk;
      const T* doi = dout + static_cast<std::size_t>(i) * s.dim + off;
      T rowdot = 0;
      for (int j = 0; j < s.tk; ++j) {
        if (p[j] == T{0}) {
          dp[j] = 0;
          continue;
        }
        const T* vj = v + static_cast<std::size_t>(j) * s.dim + off;
        T acc = 0;
        for (int d = 0; d < hd; ++d) acc += doi[d] * vj[d];
        dp[j] = acc;
        rowdot += acc * p[j];
        T* dvj = dv + static_cast<std::size_t>(j) * s.dim + off;
        for (int d = 0; d < hd; ++d) dvj[d] += p[j] * doi[d];
      }
      const T* qi = q + static_cast<std::size_t>(i) * s.dim + off;
      T* dqi = dq + static_cast<std::size_t>(i) * s.dim + off;
      for (int j = 0; j < s.tk; ++j) {
        if (p[j] == T{0}) continue;
        const T ds = p[j] * (dp[j] - rowdot) * scale;
        const T* kj = k + static_cast<std::size_t>(j) * s.dim + off;
        T* dkj = dk + static_cast<std::size_t>(j) * s.dim + off;
        for (int d = 0; d < hd; ++d) {
          dqi[d] += ds * kj[d];
          dkj[d] += ds * qi[d];
        }
      }
    }
  }
}

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = accumulate ? c[static_cast<std::size_t>(i) * n + j] : T{0};
      for (int p = 0; p < k; ++p) {
        const T av = trans_a ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
        const T bv = trans_b ? b[static_cast<std::size_t>(j) * k + p] : b[static_cast<std::size_t>(p) * n + j];
        acc += av * bv;
      }
      c[static_cast<std::size_t>(i) * n + j] = acc;
    }
  }
}

template <typename T>
void attention_forward(const T* q, const T* k, const T* v, const AttentionShape& s, const AttentionMask& mask,
                       T* out, T* probs) {
  const int hd = s.head_dim();
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  std::vector<T> scores(s.tk);
  for (int h = 0; h < s.heads; ++h) {
    for (int i = 0; i < s.tq; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < s.tk; ++j) {
        T dot = 0;
        for (int d = 0; d < hd; ++d)
          dot += q[static_cast<std::size_t>(i) * s.dim + h * hd + d] * k[static_cast<std::size_t>(j) * s.dim + h * hd + d];
        scores[j] = mask.visible(i, j) ? dot * scale : -std::numeric_limits<T>::infinity();
        mx = std::max(mx, scores[j]);
      }
      if (!std::isfinite(mx)) throw std::runtime_error("attention: query row has no visible keys");
      T sum = 0;
      for (int j = 0; j < s.tk; ++j) {
        scores[j] = mask.visible(i, j) ? std::exp(scores[j] - mx) : T{0};
        sum += scores[j];
      }
      for (int d = 0; d < hd; ++d) {
        T acc = 0;
        for (int j = 0; j < s.tk; ++j) acc += scores[j] / sum * v[static_cast<std::size_t>(j) * s.dim + h * hd + d];
        out[static_cast<std::size_t>(i) * s.dim + h * hd + d] = acc;
      }
      if (probs)
        for (int j = 0; j < s.tk; ++j) probs[(static_cast<std::size_t>(h) * s.tq + i) * s.tk + j] = scores[j] / sum;
    }
  }
}

}  // namespace reference

int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#if defined(_OPENMP)
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

#define MDASR_INSTANTIATE(T)                                                                                  \
  template void gemm<T>(bool, bool, int, int, int, const T*, const T*, T*, bool);                             \
  template void softmax_rows<T>(const T*, T*, int, int);                                                      \
  template void attention_forward<T>(const T*, const T*, const T*, const AttentionShape&, const AttentionMask&, \
                                     T*, T*);                                                                 \
  template void attention_backward<T>(const T*, const T*, const T*, const T*, const T*, const AttentionShape&, \
                                      T*, T*, T*);                                                            \
  template void reference::gemm<T>(bool, bool, int, int, int, const T*, const T*, T*, bool);                  \
  template void reference::attention_forward<T>(const T*, const T*, const T*, const AttentionShape&,          \
                                                const AttentionMask&, T*, T*);

MDASR_INSTANTIATE(float)
MDASR_INSTANTIATE(double)

#undef MDASR_INSTANTIATE

}  // namespace mdasr::kernels
