#pragma once

// CTC branch: a strided conv + classifier over encoder frames, the CTC loss
// and its exact gradient (alpha-beta recursions in the log domain), and greedy
// best-path decoding into a prior hypothesis.

#include <random>
#include <span>
#include <vector>

#include "mdasr/encoder.hpp"
#include "mdasr/ops.hpp"
#include "mdasr/params.hpp"

namespace mdasr {

class CtcInfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PriorHypothesis {
  std::vector<int> tokens;
  std::vector<double> per_token_confidence;
  int length_anchor = 0;
};

// Minimum frame count that can emit target: one frame per label plus a blank
// between adjacent repeats.
int ctc_min_frames(std::span<const int> target);

struct CtcLattice {
  Tensor<double> log_alpha;  // [T x S], includes the emission at t
  Tensor<double> log_beta;   // [T x S], suffix mass after t
  std::vector<int> extended; // blank-interleaved labels, length S
  double log_likelihood = 0.0;
};

// logits [T x classes]; blank is a class index. Throws CtcInfeasibleError if
// T is too short for target.
CtcLattice ctc_lattice(const Tensor<double>& logits, std::span<const int> target, int blank);
double ctc_loss(const Tensor<double>& logits, std::span<const int> target, int blank);
Tensor<double> ctc_grad(const Tensor<double>& logits, std::span<const int> target, int blank);

// Graph op wrapping ctc_loss/ctc_grad.
template <typename T>
Var<T> ctc_loss_op(const Var<T>& logits, std::span<const int> target, int blank);

// Per-frame argmax, collapse repeats, drop blanks. Confidence of a token is
// the mean softmax probability over the frames merged into it.
template <typename T>
PriorHypothesis greedy_decode(const Tensor<T>& logits, int blank);

template <typename T>
class CtcHead {
 public:
  static void register_params(ParamStore<T>& store, const EncoderConfig& cfg, int classes, std::mt19937_64& rng);
  CtcHead(const ParamStore<T>& store);

  // Encoder output [T x d_enc] -> logits [T' x classes], T' = floor((T-3)/2)+1.
  Var<T> logits(const Var<T>& enc) const;

 private:
  Var<T> conv_w_, conv_b_, w_, b_;
};

}  // namespace mdasr
