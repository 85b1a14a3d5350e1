#include "mdasr/ops.hpp"

#include <algorithm>
#include <cmath>

namespace mdasr {

namespace {

template <typename T>
bool wants(const Var<T>& v) {
  return v->requires_grad && v->grad.size() == v->value.size();
}

void require_matrix(const char* op, const std::vector<int>& shape) {
  if (shape.size() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(shape));
}

template <typename T>
T gelu_value(T x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T inner = c * (x + static_cast<T>(0.044715) * x * x * x);
  return static_cast<T>(0.5) * x * (T{1} + std::tanh(inner));
}

template <typename T>
T gelu_derivative(T x) {
  constexpr T c = static_cast<T>(0.7978845608028654);
  const T x2 = x * x;
  const T inner = c * (x + static_cast<T>(0.044715) * x2 * x);
  const T th = std::tanh(inner);
  const T sech2 = T{1} - th * th;
  return static_cast<T>(0.5) * (T{1} + th) + static_cast<T>(0.5) * x * sech2 * c * (T{1} + static_cast<T>(3 * 0.044715) * x2);
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_matrix("matmul", a->value.shape);
  require_matrix("matmul", b->value.shape);
  const int m = a->value.shape[0], k = a->value.shape[1], n = b->value.shape[1];
  if (b->value.shape[0] != k)
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a->value.shape) + " x " +
                         shape_str(b->value.shape));
  Tensor<T> out = Tensor<T>::matrix(m, n);
  kernels::gemm<T>(false, false, m, n, k, a->value.data.data(), b->value.data.data(), out.data.data(), false);
  return make_result<T>("matmul", std::move(out), {a, b}, [m, n, k](Node<T>& o) {
    auto& pa = o.parents[0];
    auto& pb = o.parents[1];
    if (wants(pa))  // dA = dC * B^T
      kernels::gemm<T>(false, true, m, k, n, o.grad.data(), pb->value.data.data(), pa->grad.data(), true);
    if (wants(pb))  // dB = A^T * dC
      kernels::gemm<T>(true, false, k, n, m, pa->value.data.data(), o.grad.data(), pb->grad.data(), true);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a->value.shape != b->value.shape)
    throw DimensionError("add: shape mismatch " + shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
  Tensor<T> out(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] + b->value.data[i];
  return make_result<T>("add", std::move(out), {a, b}, [](Node<T>& o) {
    for (auto& p : o.parents)
      if (wants(p))
        for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i];
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias) {
  const int cols = a->value.cols(), rows = a->value.rows();
  if (static_cast<int>(bias->value.size()) != cols)
    throw DimensionError("add_bias: bias " + shape_str(bias->value.shape) + " does not match " +
                         shape_str(a->value.shape));
  Tensor<T> out(a->value.shape);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out.at(r, c) = a->value.at(r, c) + bias->value.data[c];
  return make_result<T>("add_bias", std::move(out), {a, bias}, [rows, cols](Node<T>& o) {
    auto& pa = o.parents[0];
    auto& pb = o.parents[1];
    if (wants(pa))
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
    if (wants(pb))
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) pb->grad[c] += o.grad[static_cast<std::size_t>(r) * cols + c];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a->value.shape != b->value.shape)
    throw DimensionError("mul: shape mismatch " + shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
  Tensor<T> out(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] * b->value.data[i];
  return make_result<T>("mul", std::move(out), {a, b}, [](Node<T>& o) {
    auto& pa = o.parents[0];
    auto& pb = o.parents[1];
    if (wants(pa))
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] * pb->value.data[i];
    if (wants(pb))
      for (std::size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] += o.grad[i] * pa->value.data[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] * s;
  return make_result<T>("scale", std::move(out), {a}, [s](Node<T>& o) {
    auto& pa = o.parents[0];
    if (wants(pa))
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] * s;
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  Tensor<T> out(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = gelu_value(a->value.data[i]);
  return make_result<T>("gelu", std::move(out), {a}, [](Node<T>& o) {
    auto& pa = o.parents[0];
    if (wants(pa))
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] * gelu_derivative(pa->value.data[i]);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a->value.data) acc += v;
  return make_result<T>("sum", Tensor<T>::scalar(acc), {a}, [](Node<T>& o) {
    auto& pa = o.parents[0];
    if (wants(pa))
      for (auto& g : pa->grad) g += o.grad[0];
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  const int rows = x->value.rows(), cols = x->value.cols();
  Tensor<T> out(x->value.shape);
  kernels::softmax_rows(x->value.data.data(), out.data.data(), rows, cols);
  return make_result<T>("softmax", std::move(out), {x}, [rows, cols](Node<T>& o) {
    auto& px = o.parents[0];
    if (!wants(px)) return;
    for (int r = 0; r < rows; ++r) {
      const T* y = o.value.data.data() + static_cast<std::size_t>(r) * cols;
      const T* g = o.grad.data() + static_cast<std::size_t>(r) * cols;
      T dot = 0;
      for (int c = 0; c < cols; ++c) dot += y[c] * g[c];
      T* dx = px->grad.data() + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) dx[c] += y[c] * (g[c] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  const int rows = x->value.rows(), d = x->value.cols();
  if (d < 1) throw DimensionError("layer_norm: empty feature dimension");
  if (static_cast<int>(gain->value.size()) != d || static_cast<int>(bias->value.size()) != d)
    throw DimensionError("layer_norm: gain/bias width does not match " + shape_str(x->value.shape));
  Tensor<T> out(x->value.shape);
  std::vector<T> xhat(x->value.size()), inv_std(rows);
  for (int r = 0; r < rows; ++r) {
    const auto xr = x->value.row(r);
    T mean = 0;
    for (T v : xr) mean += v;
    mean /= d;
    T var = 0;
    for (T v : xr) var += (v - mean) * (v - mean);
    var /= d;
    inv_std[r] = T{1} / std::sqrt(var + eps);
    for (int c = 0; c < d; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * d + c;
      xhat[idx] = (xr[c] - mean) * inv_std[r];
      out.data[idx] = xhat[idx] * gain->value.data[c] + bias->value.data[c];
    }
  }
  return make_result<T>(
      "layer_norm", std::move(out), {x, gain, bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& o) {
        auto& px = o.parents[0];
        auto& pg = o.parents[1];
        auto& pb = o.parents[2];
        std::vector<T> dxhat(d);
        for (int r = 0; r < rows; ++r) {
          const T* g = o.grad.data() + static_cast<std::size_t>(r) * d;
          const T* xh = xhat.data() + static_cast<std::size_t>(r) * d;
          if (wants(pg))
            for (int c = 0; c < d; ++c) pg->grad[c] += g[c] * xh[c];
          if (wants(pb))
            for (int c = 0; c < d; ++c) pb->grad[c] += g[c];
          if (!wants(px)) continue;
          T mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (int c = 0; c < d; ++c) {
            dxhat[c] = g[c] * pg->value.data[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh[c];
          }
          mean_dxhat /= d;
          mean_dxhat_xhat /= d;
          T* dx = px->grad.data() + static_cast<std::size_t>(r) * d;
          for (int c = 0; c < d; ++c) dx[c] += inv_std[r] * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
      });
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const AttentionMask& mask, int heads) {
  require_matrix("attention", q->value.shape);
  require_matrix("attention", k->value.shape);
  require_matrix("attention", v->value.shape);
  AttentionShape s{q->value.shape[0], k->value.shape[0], q->value.shape[1], heads};
  if (k->value.shape[1] != s.dim || v->value.shape != k->value.shape)
    throw DimensionError("attention: q/k/v shapes " + shape_str(q->value.shape) + ", " + shape_str(k->value.shape) +
                         ", " + shape_str(v->value.shape) + " are incompatible");
  if (heads < 1 || s.dim % heads != 0) throw DimensionError("attention: width not divisible by head count");
  Tensor<T> out = Tensor<T>::matrix(s.tq, s.dim);
  std::vector<T> probs(static_cast<std::size_t>(heads) * s.tq * s.tk);
  kernels::attention_forward(q->value.data.data(), k->value.data.data(), v->value.data.data(), s, mask,
                             out.data.data(), probs.data());
  const bool record = grad_enabled() && (q->requires_grad || k->requires_grad || v->requires_grad);
  if (!record) probs = {};
  return make_result<T>("attention", std::move(out), {q, k, v}, [s, probs = std::move(probs)](Node<T>& o) {
    auto& pq = o.parents[0];
    auto& pk = o.parents[1];
    auto& pv = o.parents[2];
    // Scratch buffers for inputs that do not need gradients.
    std::vector<T> sq, sk, sv;
    T* dq = wants(pq) ? pq->grad.data() : (sq.assign(pq->value.size(), 0), sq.data());
    T* dk = wants(pk) ? pk->grad.data() : (sk.assign(pk->value.size(), 0), sk.data());
    T* dv = wants(pv) ? pv->grad.data() : (sv.assign(pv->value.size(), 0), sv.data());
    kernels::attention_backward(pq->value.data.data(), pk->value.data.data(), pv->value.data.data(), probs.data(),
                                o.grad.data(), s, dq, dk, dv);
  });
}

template <typename T>
Var<T> cross_entropy_masked(const Var<T>& logits, std::span<const int> targets, const std::vector<bool>& select,
                            T weight) {
  const int rows = logits->value.rows(), cols = logits->value.cols();
  if (static_cast<int>(targets.size()) != rows || static_cast<int>(select.size()) != rows)
    throw DimensionError("cross_entropy_masked: targets/select length does not match logits rows");
  Tensor<T> probs(logits->value.shape);
  kernels::softmax_rows(logits->value.data.data(), probs.data.data(), rows, cols);
  T loss = 0;
  for (int r = 0; r < rows; ++r) {
    if (!select[r]) continue;
    const int t = targets[r];
    if (t < 0 || t >= cols) throw std::out_of_range("cross_entropy_masked: target id out of range");
    const auto lr = logits->value.row(r);
    const T mx = *std::max_element(lr.begin(), lr.end());
    T se = 0;
    for (T v : lr) se += std::exp(v - mx);
    loss += (mx + std::log(se)) - lr[t];
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result<T>(
      "cross_entropy_masked", Tensor<T>::scalar(weight * loss), {logits},
      [rows, cols, weight, select, tgt = std::move(tgt), probs = std::move(probs)](Node<T>& o) {
        auto& pl = o.parents[0];
        if (!wants(pl)) return;
        const T g = o.grad[0] * weight;
        for (int r = 0; r < rows; ++r) {
          if (!select[r]) continue;
          T* dr = pl->grad.data() + static_cast<std::size_t>(r) * cols;
          const T* pr = probs.data.data() + static_cast<std::size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) dr[c] += g * pr[c];
          dr[tgt[r]] -= g;
        }
      });
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const int> ids) {
  const int rows = table->value.rows(), cols = table->value.cols();
  Tensor<T> out = Tensor<T>::matrix(static_cast<int>(ids.size()), cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= rows)
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(rows) + " rows");
    std::copy_n(table->value.data.data() + static_cast<std::size_t>(ids[i]) * cols, cols,
                out.data.data() + i * cols);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result<T>("gather_rows", std::move(out), {table}, [cols, idv = std::move(idv)](Node<T>& o) {
    auto& pt = o.parents[0];
    if (!wants(pt)) return;
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (int c = 0; c < cols; ++c) pt->grad[static_cast<std::size_t>(idv[i]) * cols + c] += o.grad[i * cols + c];
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const int cols = parts.front()->value.cols();
  int rows = 0;
  for (const auto& p : parts) {
    require_matrix("concat_rows", p->value.shape);
    if (p->value.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p->value.rows();
  }
  Tensor<T> out = Tensor<T>::matrix(rows, cols);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + at);
    at += p->value.size();
  }
  return make_result<T>("concat_rows", std::move(out), parts, [](Node<T>& o) {
    std::size_t at2 = 0;
    for (auto& p : o.parents) {
      if (wants(p))
        for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += o.grad[at2 + i];
      at2 += p->value.size();
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, int begin, int end) {
  require_matrix("slice_rows", x->value.shape);
  const int cols = x->value.cols();
  if (begin < 0 || end < begin || end > x->value.rows())
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_str(x->value.shape));
  Tensor<T> out = Tensor<T>::matrix(end - begin, cols);
  std::copy_n(x->value.data.data() + static_cast<std::size_t>(begin) * cols, out.size(), out.data.data());
  return make_result<T>("slice_rows", std::move(out), {x}, [begin, cols](Node<T>& o) {
    auto& px = o.parents[0];
    if (!wants(px)) return;
    const std::size_t base = static_cast<std::size_t>(begin) * cols;
    for (std::size_t i = 0; i < o.grad.size(); ++i) px->grad[base + i] += o.grad[i];
  });
}

template <typename T>
Var<T> conv_windows(const Var<T>& x, int kernel, int stride) {
  require_matrix("conv_windows", x->value.shape);
  if (kernel < 1 || stride < 1) throw std::invalid_argument("conv_windows: kernel and stride must be positive");
  const int len = x->value.rows(), cols = x->value.cols();
  const int out_len = conv_output_length(len, kernel, stride);
  Tensor<T> out = Tensor<T>::matrix(out_len, kernel * cols);
  for (int i = 0; i < out_len; ++i)
    std::copy_n(x->value.data.data() + static_cast<std::size_t>(i) * stride * cols, kernel * cols,
                out.data.data() + static_cast<std::size_t>(i) * kernel * cols);
  return make_result<T>("conv_windows", std::move(out), {x}, [out_len, kernel, stride, cols](Node<T>& o) {
    auto& px = o.parents[0];
    if (!wants(px)) return;
    for (int i = 0; i < out_len; ++i) {
      const std::size_t src = static_cast<std::size_t>(i) * kernel * cols;
      const std::size_t dst = static_cast<std::size_t>(i) * stride * cols;
      for (int j = 0; j < kernel * cols; ++j) px->grad[dst + j] += o.grad[src + j];
    }
  });
}

#define MDASR_INSTANTIATE(T)                                                                                   \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> scale<T>(const Var<T>&, T);                                                                  \
  template Var<T> gelu<T>(const Var<T>&);                                                                      \
  template Var<T> sum<T>(const Var<T>&);                                                                       \
  template Var<T> softmax<T>(const Var<T>&);                                                                   \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                               \
  template Var<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&, const AttentionMask&, int);        \
  template Var<T> cross_entropy_masked<T>(const Var<T>&, std::span<const int>, const std::vector<bool>&, T);   \
  template Var<T> gather_rows<T>(const Var<T>&, std::span<const int>);                                         \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                                  \
  template Var<T> slice_rows<T>(const Var<T>&, int, int);                                                      \
  template Var<T> conv_windows<T>(const Var<T>&, int, int);

MDASR_INSTANTIATE(float)
MDASR_INSTANTIATE(double)

#undef MDASR_INSTANTIATE

}  // namespace mdasr
