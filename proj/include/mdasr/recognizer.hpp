#pragma once

// Per-utterance inference on a trained model: encoder features, the CTC
// prior, the diffusion decoders and the autoregressive baseline.

#include <string>
#include <vector>

#include "mdasr/model.hpp"
#include "mdasr/scheduler.hpp"

namespace mdasr {

struct EncodedUtterance {
  Var<float> encoded;   // encoder output [T x d_enc]
  Var<float> acoustic;  // adapter output [T' x d_model]
};

EncodedUtterance encode_utterance(const AsrModel<float>& model, const SyntheticUtterance& utt);

PriorHypothesis ctc_prior(const AsrModel<float>& model, const Var<float>& encoded);

// Adaptive decoding; the prior is computed only when cfg.use_prior is set.
ScheduleTrace adaptive_decode(const AsrModel<float>& model, const EncodedUtterance& enc, const SchedulerConfig& cfg);
ScheduleTrace vanilla_decode(const AsrModel<float>& model, const EncodedUtterance& enc, const SchedulerConfig& cfg);

struct ArResult {
  std::vector<int> emitted;  // model outputs in order, including a final pad
  int nfe = 0;
  std::string transcript;
};

// Greedy left-to-right decoding with a growing K/V cache; stops after
// emitting pad or max_len tokens. One forward per emitted token.
ArResult ar_greedy_decode(const AsrModel<float>& model, const Var<float>& acoustic, int max_len);

}  // namespace mdasr
