#include "mdasr/recognizer.hpp"

#include <algorithm>

namespace mdasr {

EncodedUtterance encode_utterance(const AsrModel<float>& model, const SyntheticUtterance& utt) {
  NoGradGuard guard;
  EncodedUtterance out;
  out.encoded = model.encoder().encode(model.frames_input(utt));
  out.acoustic = model.acoustic_features(out.encoded);
  return out;
}

PriorHypothesis ctc_prior(const AsrModel<float>& model, const Var<float>& encoded) {
  NoGradGuard guard;
  return greedy_decode(model.ctc().logits(encoded)->value, model.vocab().ctc_blank_class());
}

ScheduleTrace adaptive_decode(const AsrModel<float>& model, const EncodedUtterance& enc, const SchedulerConfig& cfg) {
  std::optional<PriorHypothesis> prior;
  if (cfg.use_prior) prior = ctc_prior(model, enc.encoded);
  DenoiserLogits logits(model.denoiser(), enc.acoustic);
  const DecodeState state = init_state(prior, cfg, model.config().denoiser.max_answer_len, model.vocab());
  return run(state, logits, cfg, model.vocab());
}

ScheduleTrace vanilla_decode(const AsrModel<float>& model, const EncodedUtterance& enc, const SchedulerConfig& cfg) {
  DenoiserLogits logits(model.denoiser(), enc.acoustic);
  return vanilla_decode(logits, cfg, model.vocab());
}

ArResult ar_greedy_decode(const AsrModel<float>& model, const Var<float>& acoustic, int max_len) {
  if (!model.causal()) throw std::logic_error("ar_greedy_decode: the model was not trained in causal mode");
  ArResult out;
  const Vocab& vocab = model.vocab();
  max_len = std::min(max_len, model.config().denoiser.max_answer_len);
  if (max_len <= 0) return out;
  NoGradGuard guard;
  KvCache<float> cache;
  const int bos = vocab.mask();
  auto pick = [](const Tensor<float>& logits) {
    const auto r = logits.row(logits.rows() - 1);
    return static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  };
  int token = pick(model.denoiser().forward_cached_all(acoustic, std::span<const int>(&bos, 1), cache)->value);
  ++out.nfe;
  out.emitted.push_back(token);
  while (token != vocab.pad() && static_cast<int>(out.emitted.size()) < max_len) {
    const int pos = static_cast<int>(out.emitted.size());
    token = pick(model.denoiser().forward_extend(std::span<const int>(&token, 1), pos, cache)->value);
    ++out.nfe;
    out.emitted.push_back(token);
  }
  out.transcript = vocab.decode(out.emitted);
  return out;
}

}  // namespace mdasr
