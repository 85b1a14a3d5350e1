#include "mdasr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mdasr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

Tensor<double> log_softmax_rows(const Tensor<double>& logits) {
  Tensor<double> out(logits.shape);
  for (int t = 0; t < logits.rows(); ++t) {
    const auto r = logits.row(t);
    const double mx = *std::max_element(r.begin(), r.end());
    double se = 0.0;
    for (double v : r) se += std::exp(v - mx);
    const double lse = mx + std::log(se);
    for (int c = 0; c < logits.cols(); ++c) out.at(t, c) = r[c] - lse;
  }
  return out;
}

}  // namespace

int ctc_min_frames(std::span<const int> target) {
  int n = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

CtcLattice ctc_lattice(const Tensor<double>& logits, std::span<const int> target, int blank) {
  const int frames = logits.rows(), classes = logits.cols();
  if (blank < 0 || blank >= classes) throw std::out_of_range("ctc: blank index outside the class range");
  for (int l : target)
    if (l < 0 || l >= classes || l == blank) throw std::out_of_range("ctc: invalid target label " + std::to_string(l));
  const int need = ctc_min_frames(target);
  if (frames < std::max(need, 1))
    throw CtcInfeasibleError("ctc: target of length " + std::to_string(target.size()) + " needs at least " +
                             std::to_string(need) + " frames, got " + std::to_string(frames));

  CtcLattice lat;
  const int s_len = 2 * static_cast<int>(target.size()) + 1;
  lat.extended.assign(s_len, blank);
  for (std::size_t i = 0; i < target.size(); ++i) lat.extended[2 * i + 1] = target[i];
  const auto& ext = lat.extended;
  auto skip_allowed = [&](int s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  const Tensor<double> lp = log_softmax_rows(logits);
  lat.log_alpha = Tensor<double>::matrix(frames, s_len, kNegInf);
  lat.log_beta = Tensor<double>::matrix(frames, s_len, kNegInf);
  auto& la = lat.log_alpha;
  auto& lb = lat.log_beta;

  la.at(0, 0) = lp.at(0, ext[0]);
  if (s_len > 1) la.at(0, 1) = lp.at(0, ext[1]);
  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < s_len; ++s) {
      double acc = la.at(t - 1, s);
      if (s >= 1) acc = log_add(acc, la.at(t - 1, s - 1));
      if (skip_allowed(s)) acc = log_add(acc, la.at(t - 1, s - 2));
      la.at(t, s) = acc == kNegInf ? kNegInf : acc + lp.at(t, ext[s]);
    }
  }

  lb.at(frames - 1, s_len - 1) = 0.0;
  if (s_len > 1) lb.at(frames - 1, s_len - 2) = 0.0;
  for (int t = frames - 2; t >= 0; --t) {
    for (int s = 0; s < s_len; ++s) {
      double acc = lb.at(t + 1, s) + lp.at(t + 1, ext[s]);
      if (s + 1 < s_len) acc = log_add(acc, lb.at(t + 1, s + 1) + lp.at(t + 1, ext[s + 1]));
      if (s + 2 < s_len && skip_allowed(s + 2)) acc = log_add(acc, lb.at(t + 1, s + 2) + lp.at(t + 1, ext[s + 2]));
      lb.at(t, s) = acc;
    }
  }

  double total = la.at(frames - 1, s_len - 1);
  if (s_len > 1) total = log_add(total, la.at(frames - 1, s_len - 2));
  lat.log_likelihood = total;
  return lat;
}

double ctc_loss(const Tensor<double>& logits, std::span<const int> target, int blank) {
  return -ctc_lattice(logits, target, blank).log_likelihood;
}

Tensor<double> ctc_grad(const Tensor<double>& logits, std::span<const int> target, int blank) {
  const CtcLattice lat = ctc_lattice(logits, target, blank);
  const int frames = logits.rows(), classes = logits.cols();
  const int s_len = static_cast<int>(lat.extended.size());
  Tensor<double> grad(logits.shape);
  std::vector<double> occupancy(classes);
  for (int t = 0; t < frames; ++t) {
    const auto r = logits.row(t);
    const double mx = *std::max_element(r.begin(), r.end());
    double se = 0.0;
    for (double v : r) se += std::exp(v - mx);
    std::fill(occupancy.begin(), occupancy.end(), kNegInf);
    for (int s = 0; s < s_len; ++s) {
      const int k = lat.extended[s];
      occupancy[k] = log_add(occupancy[k], lat.log_alpha.at(t, s) + lat.log_beta.at(t, s));
    }
    for (int c = 0; c < classes; ++c) {
      const double y = std::exp(r[c] - mx) / se;
      grad.at(t, c) = y - std::exp(occupancy[c] - lat.log_likelihood);
    }
  }
  return grad;
}

template <typename T>
Var<T> ctc_loss_op(const Var<T>& logits, std::span<const int> target, int blank) {
  const Tensor<double> z = logits->value.template cast<double>();
  const CtcLattice lat = ctc_lattice(z, target, blank);
  const double loss = -lat.log_likelihood;
  const bool record = grad_enabled() && logits->requires_grad;
  Tensor<double> grad = record ? ctc_grad(z, target, blank) : Tensor<double>{};
  return make_result<T>("ctc_loss", Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                        [grad = std::move(grad)](Node<T>& o) {
                          auto& pl = o.parents[0];
                          if (!pl->requires_grad) return;
                          for (std::size_t i = 0; i < grad.data.size(); ++i)
                            pl->grad[i] += static_cast<T>(o.grad[0] * grad.data[i]);
                        });
}

template <typename T>
PriorHypothesis greedy_decode(const Tensor<T>& logits, int blank) {
  PriorHypothesis hyp;
  int prev = -1;
  double conf_sum = 0.0;
  int conf_count = 0;
  auto flush = [&]() {
    if (prev >= 0 && prev != blank) {
      hyp.tokens.push_back(prev);
      hyp.per_token_confidence.push_back(conf_sum / conf_count);
    }
  };
  for (int t = 0; t < logits.rows(); ++t) {
    const auto r = logits.row(t);
    const int best = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    double se = 0.0;
    for (T v : r) se += std::exp(static_cast<double>(v - r[best]));
    const double p = 1.0 / se;
    if (best != prev) {
      flush();
      prev = best;
      conf_sum = 0.0;
      conf_count = 0;
    }
    conf_sum += p;
    ++conf_count;
  }
  flush();
  hyp.length_anchor = static_cast<int>(hyp.tokens.size());
  return hyp;
}

template <typename T>
void CtcHead<T>::register_params(ParamStore<T>& store, const EncoderConfig& cfg, int classes, std::mt19937_64& rng) {
  const int k = kAdapterKernel * cfg.d_enc;
  store.add_normal("ctc.conv_w", {k, cfg.d_enc}, 1.0 / std::sqrt(k), rng);
  store.add_constant("ctc.conv_b", {cfg.d_enc}, T{0});
  store.add_normal("ctc.w", {cfg.d_enc, classes}, 1.0 / std::sqrt(cfg.d_enc), rng);
  store.add_constant("ctc.b", {classes}, T{0});
}

template <typename T>
CtcHead<T>::CtcHead(const ParamStore<T>& store)
    : conv_w_(store.get("ctc.conv_w")), conv_b_(store.get("ctc.conv_b")), w_(store.get("ctc.w")), b_(store.get("ctc.b")) {}

template <typename T>
Var<T> CtcHead<T>::logits(const Var<T>& enc) const {
  Var<T> c = gelu(add_bias(matmul(conv_windows(enc, kAdapterKernel, kAdapterStride), conv_w_), conv_b_));
  return add_bias(matmul(c, w_), b_);
}

template Var<float> ctc_loss_op<float>(const Var<float>&, std::span<const int>, int);
template Var<double> ctc_loss_op<double>(const Var<double>&, std::span<const int>, int);
template PriorHypothesis greedy_decode<float>(const Tensor<float>&, int);
template PriorHypothesis greedy_decode<double>(const Tensor<double>&, int);
template class CtcHead<float>;
template class CtcHead<double>;

}  // namespace mdasr
