#include "mdasr/denoiser.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mdasr {

void DenoiserConfig::validate() const {
  if (layers < 1 || heads < 1 || d_model < 1 || mlp_hidden < 1) throw std::invalid_argument("denoiser: sizes must be positive");
  if (d_model % heads != 0) throw std::invalid_argument("denoiser: d_model must be divisible by heads");
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("denoiser: alpha must lie in [0, 1]");
  if (max_answer_len < 1 || max_acoustic_len < 1) throw std::invalid_argument("denoiser: maximum lengths must be positive");
}

TokenSequence TokenSequence::answer_only(std::vector<int> answer) {
  TokenSequence s;
  s.regions.assign(answer.size(), Region::kAnswer);
  s.ids = std::move(answer);
  return s;
}

TokenSequence TokenSequence::with_prompt(const Vocab& vocab, std::vector<int> answer) {
  TokenSequence s;
  for (int i = 0; i < vocab.prompt_tokens(); ++i) {
    s.ids.push_back(vocab.prompt(i));
    s.regions.push_back(Region::kPrompt);
  }
  for (int id : answer) {
    s.ids.push_back(id);
    s.regions.push_back(Region::kAnswer);
  }
  return s;
}

std::vector<int> TokenSequence::answer_ids() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (regions[i] == Region::kAnswer) out.push_back(ids[i]);
  return out;
}

NoiseDraw draw_noise(double alpha, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < alpha) return {1.0, true};
  return {kMinNoiseLevel + (1.0 - kMinNoiseLevel) * (1.0 - u(rng)), false};
}

MaskedSequence forward_masking(const TokenSequence& x0, const NoiseDraw& draw, int mask_id, std::mt19937_64& rng) {
  if (!(draw.t > 0.0 && draw.t <= 1.0)) throw std::invalid_argument("forward_masking: t must lie in (0, 1]");
  if (draw.forced_full && draw.t != 1.0) throw std::invalid_argument("forward_masking: forced draw requires t = 1");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MaskedSequence out{x0, std::vector<bool>(x0.ids.size(), false), 0};
  for (std::size_t i = 0; i < x0.ids.size(); ++i) {
    if (x0.regions[i] != Region::kAnswer) continue;
    if (x0.ids[i] == mask_id) throw std::invalid_argument("forward_masking: clean sequence already contains [M]");
    // Always consume a draw so the stream does not depend on t.
    const double r = u(rng);
    if (r < draw.t) {
      out.xt.ids[i] = mask_id;
      out.masked[i] = true;
      ++out.n_masked;
    }
  }
  return out;
}

namespace {

// Sinusoidal starting point for learned positions. Answer positions advance
// faster than acoustic ones, matching the average encoded frames per character.
constexpr double kPosAmplitude = 2.0;
constexpr double kAnswerPosStep = 1.5;

template <typename T>
Tensor<T> sinusoid_positions(int rows, int d, double step) {
  Tensor<T> out = Tensor<T>::matrix(rows, d);
  for (int p = 0; p < rows; ++p)
    for (int k = 0; k < d / 2; ++k) {
      const double f = std::pow(100.0, -2.0 * k / d);
      out.data[p * d + 2 * k] = static_cast<T>(kPosAmplitude * std::sin(p * step * f));
      out.data[p * d + 2 * k + 1] = static_cast<T>(kPosAmplitude * std::cos(p * step * f));
    }
  return out;
}

}  // namespace

template <typename T>
void Denoiser<T>::register_params(ParamStore<T>& store, const DenoiserConfig& cfg, const Vocab& vocab,
                                  std::mt19937_64& rng) {
  cfg.validate();
  const int d = cfg.d_model;
  const double wstd = 1.0 / std::sqrt(d);
  const double out_std = wstd / std::sqrt(2.0 * cfg.layers);
  store.add_normal("dec.tok_emb", {vocab.size(), d}, 0.5, rng);
  store.add_normal("dec.prompt_pos", {std::max(1, vocab.prompt_tokens()), d}, 0.1, rng);
  store.add("dec.acoustic_pos", sinusoid_positions<T>(cfg.max_acoustic_len, d, 1.0));
  store.add("dec.answer_pos", sinusoid_positions<T>(cfg.max_answer_len, d, kAnswerPosStep));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l) + ".";
    store.add_constant(p + "ln1_g", {d}, T{1});
    store.add_constant(p + "ln1_b", {d}, T{0});
    store.add_normal(p + "wq", {d, d}, wstd, rng);
    store.add_constant(p + "bq", {d}, T{0});
    store.add_normal(p + "wk", {d, d}, wstd, rng);
    store.add_constant(p + "bk", {d}, T{0});
    store.add_normal(p + "wv", {d, d}, wstd, rng);
    store.add_constant(p + "bv", {d}, T{0});
    store.add_normal(p + "wo", {d, d}, out_std, rng);
    store.add_constant(p + "bo", {d}, T{0});
    store.add_constant(p + "ln2_g", {d}, T{1});
    store.add_constant(p + "ln2_b", {d}, T{0});
    store.add_normal(p + "w1", {d, cfg.mlp_hidden}, wstd, rng);
    store.add_constant(p + "b1", {cfg.mlp_hidden}, T{0});
    store.add_normal(p + "w2", {cfg.mlp_hidden, d}, out_std * std::sqrt(static_cast<double>(d) / cfg.mlp_hidden), rng);
    store.add_constant(p + "b2", {d}, T{0});
  }
  store.add_constant("dec.lnf_g", {d}, T{1});
  store.add_constant("dec.lnf_b", {d}, T{0});
  store.add_normal("dec.w_out", {d, vocab.output_size()}, wstd, rng);
  store.add_constant("dec.b_out", {vocab.output_size()}, T{0});
}

template <typename T>
Denoiser<T>::Denoiser(const ParamStore<T>& store, const DenoiserConfig& cfg, const Vocab& vocab)
    : cfg_(cfg),
      vocab_(vocab),
      tok_emb_(store.get("dec.tok_emb")),
      prompt_pos_(store.get("dec.prompt_pos")),
      acoustic_pos_(store.get("dec.acoustic_pos")),
      answer_pos_(store.get("dec.answer_pos")),
      lnf_g_(store.get("dec.lnf_g")),
      lnf_b_(store.get("dec.lnf_b")),
      w_out_(store.get("dec.w_out")),
      b_out_(store.get("dec.b_out")) {
  cfg_.validate();
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l) + ".";
    layers_.push_back({store.get(p + "ln1_g"), store.get(p + "ln1_b"), store.get(p + "wq"), store.get(p + "bq"),
                       store.get(p + "wk"), store.get(p + "bk"), store.get(p + "wv"), store.get(p + "bv"),
                       store.get(p + "wo"), store.get(p + "bo"), store.get(p + "ln2_g"), store.get(p + "ln2_b"),
                       store.get(p + "w1"), store.get(p + "b1"), store.get(p + "w2"), store.get(p + "b2")});
  }
}

template <typename T>
Var<T> Denoiser<T>::embed_prefix(const Var<T>& acoustic) const {
  const int ta = acoustic->value.rows();
  if (acoustic->value.cols() != cfg_.d_model)
    throw DimensionError("denoiser: acoustic width " + std::to_string(acoustic->value.cols()) + " != d_model");
  if (ta > cfg_.max_acoustic_len)
    throw DimensionError("denoiser: " + std::to_string(ta) + " acoustic frames exceed max_acoustic_len " +
                         std::to_string(cfg_.max_acoustic_len));
  std::vector<int> apos(ta);
  std::iota(apos.begin(), apos.end(), 0);
  Var<T> ac = add(acoustic, gather_rows(acoustic_pos_, std::span<const int>(apos)));
  if (!cfg_.prompt_region) return ac;
  std::vector<int> pids(vocab_.prompt_tokens()), ppos(vocab_.prompt_tokens());
  for (int i = 0; i < vocab_.prompt_tokens(); ++i) {
    pids[i] = vocab_.prompt(i);
    ppos[i] = i;
  }
  Var<T> pr = add(gather_rows(tok_emb_, std::span<const int>(pids)), gather_rows(prompt_pos_, std::span<const int>(ppos)));
  return concat_rows<T>({pr, ac});
}

template <typename T>
Var<T> Denoiser<T>::embed_answer(std::span<const int> ids, int start) const {
  const int n = static_cast<int>(ids.size());
  if (start + n > cfg_.max_answer_len)
    throw DimensionError("denoiser: answer region of " + std::to_string(start + n) + " exceeds max_answer_len " +
                         std::to_string(cfg_.max_answer_len));
  std::vector<int> pos(n);
  std::iota(pos.begin(), pos.end(), start);
  return add(gather_rows(tok_emb_, ids), gather_rows(answer_pos_, std::span<const int>(pos)));
}

namespace {

template <typename T>
void append_rows(Tensor<T>& dst, const Tensor<T>& src, int rows) {
  const int cols = src.cols();
  if (dst.shape.empty()) dst = Tensor<T>::matrix(0, cols);
  dst.data.insert(dst.data.end(), src.data.begin(), src.data.begin() + static_cast<std::size_t>(rows) * cols);
  dst.shape[0] += rows;
}

}  // namespace

template <typename T>
Var<T> Denoiser<T>::run_blocks(Var<T> h, int offset, int prefix_len, const KvCache<T>* past, KvCache<T>* sink,
                               int sink_rows) const {
  const AttentionMask mask = cfg_.causal ? AttentionMask::prefix(prefix_len, offset) : AttentionMask::full();
  if (sink && sink->keys.empty()) {
    sink->keys.resize(cfg_.layers);
    sink->values.resize(cfg_.layers);
  }
  for (int l = 0; l < cfg_.layers; ++l) {
    const Layer& L = layers_[l];
    Var<T> x = layer_norm(h, L.ln1_g, L.ln1_b);
    Var<T> q = add_bias(matmul(x, L.wq), L.bq);
    Var<T> k = add_bias(matmul(x, L.wk), L.bk);
    Var<T> v = add_bias(matmul(x, L.wv), L.bv);
    Var<T> keys = k, values = v;
    if (past && past->length > 0) {
      keys = concat_rows<T>({constant(past->keys[l]), k});
      values = concat_rows<T>({constant(past->values[l]), v});
    }
    if (sink) {
      append_rows(sink->keys[l], k->value, sink_rows);
      append_rows(sink->values[l], v->value, sink_rows);
    }
    Var<T> a = attention(q, keys, values, mask, cfg_.heads);
    h = add(h, add_bias(matmul(a, L.wo), L.bo));
    x = layer_norm(h, L.ln2_g, L.ln2_b);
    h = add(h, add_bias(matmul(gelu(add_bias(matmul(x, L.w1), L.b1)), L.w2), L.b2));
  }
  if (sink) sink->length += sink_rows;
  return h;
}

template <typename T>
Var<T> Denoiser<T>::head(const Var<T>& h) const {
  return add_bias(matmul(layer_norm(h, lnf_g_, lnf_b_), w_out_), b_out_);
}

template <typename T>
Var<T> Denoiser<T>::forward(const Var<T>& acoustic, std::span<const int> answer_ids, KvCache<T>* cache,
                            CacheMode mode) const {
  if (answer_ids.empty()) throw DimensionError("denoiser: empty answer region");
  const int plen = prefix_len(acoustic->value.rows());
  if (mode == CacheMode::kUsePrefix) {
    if (!cache || !cache->built()) throw std::logic_error("denoiser: speech cache has not been built");
    if (cache->prefix_len != plen || cache->length != plen)
      throw DimensionError("denoiser: speech cache covers " + std::to_string(cache->length) +
                           " rows but the features need " + std::to_string(plen));
    Var<T> h = run_blocks(embed_answer(answer_ids, 0), plen, plen, cache, nullptr, 0);
    return head(h);
  }
  Var<T> h = concat_rows<T>({embed_prefix(acoustic), embed_answer(answer_ids, 0)});
  KvCache<T>* sink = nullptr;
  if (mode == CacheMode::kBuildPrefix) {
    if (!cache) throw std::invalid_argument("denoiser: kBuildPrefix needs a cache");
    cache->clear();
    cache->prefix_len = plen;
    sink = cache;
  }
  h = run_blocks(h, 0, plen, nullptr, sink, plen);
  return head(slice_rows(h, plen, plen + static_cast<int>(answer_ids.size())));
}

template <typename T>
Var<T> Denoiser<T>::forward_cached_all(const Var<T>& acoustic, std::span<const int> answer_ids,
                                       KvCache<T>& cache) const {
  const int plen = prefix_len(acoustic->value.rows());
  Var<T> h = concat_rows<T>({embed_prefix(acoustic), embed_answer(answer_ids, 0)});
  cache.clear();
  cache.prefix_len = plen;
  const int rows = h->value.rows();
  h = run_blocks(h, 0, plen, nullptr, &cache, rows);
  return head(slice_rows(h, plen, rows));
}

template <typename T>
Var<T> Denoiser<T>::forward_extend(std::span<const int> answer_ids, int start, KvCache<T>& cache) const {
  if (!cache.built()) throw std::logic_error("denoiser: forward_extend before the cache was built");
  if (cache.length != cache.prefix_len + start)
    throw DimensionError("denoiser: cache holds " + std::to_string(cache.length) + " rows, expected " +
                         std::to_string(cache.prefix_len + start));
  Var<T> h = embed_answer(answer_ids, start);
  const int offset = cache.length;
  h = run_blocks(h, offset, cache.prefix_len, &cache, &cache, static_cast<int>(answer_ids.size()));
  return head(h);
}

template <typename T>
DiffusionLoss<T> diffusion_loss_at(const Denoiser<T>& model, std::span<const int> x0, const Var<T>& acoustic,
                                   const NoiseDraw& draw, std::mt19937_64& rng, int mask_id) {
  const TokenSequence clean = TokenSequence::answer_only(std::vector<int>(x0.begin(), x0.end()));
  MaskedSequence ms = forward_masking(clean, draw, mask_id, rng);
  Var<T> logits = model.forward(acoustic, ms.xt.ids);
  Var<T> loss = cross_entropy_masked(logits, x0, ms.masked, static_cast<T>(1.0 / draw.t));
  return {loss, draw, ms.n_masked, ms.n_masked == 0};
}

template <typename T>
DiffusionLoss<T> diffusion_loss(const Denoiser<T>& model, std::span<const int> x0, const Var<T>& acoustic,
                                std::mt19937_64& rng, double alpha, int mask_id) {
  if (x0.empty()) throw DimensionError("diffusion_loss: empty answer");
  NoiseDraw draw = draw_noise(alpha, rng);
  const TokenSequence clean = TokenSequence::answer_only(std::vector<int>(x0.begin(), x0.end()));
  MaskedSequence ms = forward_masking(clean, draw, mask_id, rng);
  if (ms.n_masked == 0) {
    draw = draw_noise(alpha, rng);
    ms = forward_masking(clean, draw, mask_id, rng);
  }
  // With nothing masked the selection is empty and the loss is zero.
  Var<T> logits = model.forward(acoustic, ms.xt.ids);
  Var<T> loss = cross_entropy_masked(logits, x0, ms.masked, static_cast<T>(1.0 / draw.t));
  return {loss, draw, ms.n_masked, ms.n_masked == 0};
}

template <typename T>
Var<T> prior_correction_loss(const Denoiser<T>& model, std::span<const int> noisy_input,
                             std::span<const int> targets, const Var<T>& acoustic) {
  if (noisy_input.size() != targets.size()) throw DimensionError("prior_correction_loss: length mismatch");
  Var<T> logits = model.forward(acoustic, noisy_input);
  return cross_entropy_masked(logits, targets, std::vector<bool>(targets.size(), true), T{1});
}

template <typename T>
Var<T> next_token_loss(const Denoiser<T>& model, std::span<const int> transcript, const Var<T>& acoustic,
                       const Vocab& vocab) {
  if (!model.config().causal) throw std::logic_error("next_token_loss: model is not causal");
  std::vector<int> input{vocab.mask()};
  input.insert(input.end(), transcript.begin(), transcript.end());
  std::vector<int> targets(transcript.begin(), transcript.end());
  targets.push_back(vocab.pad());
  Var<T> logits = model.forward(acoustic, input);
  return cross_entropy_masked(logits, std::span<const int>(targets), std::vector<bool>(targets.size(), true), T{1});
}

#define MDASR_INSTANTIATE(T)                                                                                  \
  template class Denoiser<T>;                                                                                 \
  template DiffusionLoss<T> diffusion_loss_at<T>(const Denoiser<T>&, std::span<const int>, const Var<T>&,     \
                                                 const NoiseDraw&, std::mt19937_64&, int);                    \
  template DiffusionLoss<T> diffusion_loss<T>(const Denoiser<T>&, std::span<const int>, const Var<T>&,        \
                                              std::mt19937_64&, double, int);                                 \
  template Var<T> prior_correction_loss<T>(const Denoiser<T>&, std::span<const int>, std::span<const int>,    \
                                           const Var<T>&);                                                    \
  template Var<T> next_token_loss<T>(const Denoiser<T>&, std::span<const int>, const Var<T>&, const Vocab&);

MDASR_INSTANTIATE(float)
MDASR_INSTANTIATE(double)

#undef MDASR_INSTANTIATE

}  // namespace mdasr
