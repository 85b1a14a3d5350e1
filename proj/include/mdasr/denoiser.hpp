#pragma once

// Transformer over [prompt region ; acoustic features ; answer region].
// Bidirectional attention makes it a masked-diffusion denoiser; with a
// prefix-causal mask the same backbone is the autoregressive baseline.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mdasr/encoder.hpp"
#include "mdasr/ops.hpp"
#include "mdasr/params.hpp"
#include "mdasr/vocab.hpp"

namespace mdasr {

struct DenoiserConfig {
  int layers = 4;
  int heads = 4;
  int d_model = 64;
  int mlp_hidden = 128;
  int max_answer_len = 48;
  int max_acoustic_len = 64;
  bool prompt_region = true;
  bool causal = false;
  double alpha = 0.2;  // probability of a forced t = 1 draw

  void validate() const;
};

enum class Region : std::uint8_t { kPrompt, kAnswer };

struct TokenSequence {
  std::vector<int> ids;
  std::vector<Region> regions;

  static TokenSequence answer_only(std::vector<int> answer);
  static TokenSequence with_prompt(const Vocab& vocab, std::vector<int> answer);
  std::vector<int> answer_ids() const;
  int size() const { return static_cast<int>(ids.size()); }
};

struct NoiseDraw {
  double t = 1.0;
  bool forced_full = false;
};

// Lower bound of the sampled noise level; bounds the 1/t loss weight.
inline constexpr double kMinNoiseLevel = 1e-3;

// t ~ Uniform[kMinNoiseLevel, 1], or t = 1 with probability alpha.
NoiseDraw draw_noise(double alpha, std::mt19937_64& rng);

struct MaskedSequence {
  TokenSequence xt;
  std::vector<bool> masked;  // per position of xt
  int n_masked = 0;
};

// Replaces each answer position with the mask id independently with
// probability t. Prompt positions are never touched.
MaskedSequence forward_masking(const TokenSequence& x0, const NoiseDraw& draw, int mask_id, std::mt19937_64& rng);

// Per-layer key/value rows for a prefix of the sequence.
template <typename T>
struct KvCache {
  std::vector<Tensor<T>> keys;
  std::vector<Tensor<T>> values;
  int length = 0;      // rows cached
  int prefix_len = 0;  // prompt + acoustic rows of the sequence it was built from

  bool built() const { return !keys.empty(); }
  void clear() {
    keys.clear();
    values.clear();
    length = prefix_len = 0;
  }
};

enum class CacheMode {
  kNone,         // full forward, cache untouched
  kBuildPrefix,  // full forward, capture prompt + acoustic K/V
  kUsePrefix,    // answer rows only, attending to cached prompt + acoustic K/V
};

template <typename T>
class Denoiser {
 public:
  static void register_params(ParamStore<T>& store, const DenoiserConfig& cfg, const Vocab& vocab,
                              std::mt19937_64& rng);
  Denoiser(const ParamStore<T>& store, const DenoiserConfig& cfg, const Vocab& vocab);

  const DenoiserConfig& config() const { return cfg_; }
  int prompt_len() const { return cfg_.prompt_region ? vocab_.prompt_tokens() : 0; }
  int prefix_len(int acoustic_len) const { return prompt_len() + acoustic_len; }

  // Logits [answer_len x output_size] for the answer region.
  Var<T> forward(const Var<T>& acoustic, std::span<const int> answer_ids, KvCache<T>* cache = nullptr,
                 CacheMode mode = CacheMode::kNone) const;

  // Causal mode: full forward over prefix + answer_ids that caches every row.
  Var<T> forward_cached_all(const Var<T>& acoustic, std::span<const int> answer_ids, KvCache<T>& cache) const;
  // Causal mode: appends answer rows at positions [start, start + n) to the cache.
  Var<T> forward_extend(std::span<const int> answer_ids, int start, KvCache<T>& cache) const;

 private:
  struct Layer {
    Var<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  Var<T> embed_prefix(const Var<T>& acoustic) const;
  Var<T> embed_answer(std::span<const int> ids, int start) const;
  Var<T> run_blocks(Var<T> h, int offset, int prefix_len, const KvCache<T>* past, KvCache<T>* sink,
                    int sink_rows) const;
  Var<T> head(const Var<T>& h) const;

  DenoiserConfig cfg_;
  Vocab vocab_;
  Var<T> tok_emb_, prompt_pos_, acoustic_pos_, answer_pos_, lnf_g_, lnf_b_, w_out_, b_out_;
  std::vector<Layer> layers_;
};

// Scaled masked cross-entropy for one utterance:
// (1/t) * sum over masked answer positions of -log p(x0_i | x_t, A).
template <typename T>
struct DiffusionLoss {
  Var<T> loss;
  NoiseDraw draw;
  int n_masked = 0;
  bool skipped = false;
};

template <typename T>
DiffusionLoss<T> diffusion_loss_at(const Denoiser<T>& model, std::span<const int> x0, const Var<T>& acoustic,
                                   const NoiseDraw& draw, std::mt19937_64& rng, int mask_id);

// Samples t (resampling once if nothing got masked) and evaluates the loss.
template <typename T>
DiffusionLoss<T> diffusion_loss(const Denoiser<T>& model, std::span<const int> x0, const Var<T>& acoustic,
                                std::mt19937_64& rng, double alpha, int mask_id);

// Unweighted cross-entropy over every answer position given a fully visible
// (possibly corrupted) input; trains the step that reads a prior hypothesis.
template <typename T>
Var<T> prior_correction_loss(const Denoiser<T>& model, std::span<const int> noisy_input,
                             std::span<const int> targets, const Var<T>& acoustic);

// Next-token loss for the causal baseline: input [mask, x...], targets [x..., pad].
template <typename T>
Var<T> next_token_loss(const Denoiser<T>& model, std::span<const int> transcript, const Var<T>& acoustic,
                       const Vocab& vocab);

}  // namespace mdasr
