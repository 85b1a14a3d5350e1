#pragma once

// Training loops: the diffusion denoiser (or its causal AR variant) with the
// encoder and adapter, and the CTC head on the frozen encoder.

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdasr/checkpoint.hpp"
#include "mdasr/model.hpp"
#include "mdasr/synthdata.hpp"

namespace mdasr {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  std::string phase;  // diffusion | ar | ctc
  int epoch = 0;      // 0: evaluation before any update
  std::int64_t optimizer_steps = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  // NaN when not measured (serialized as null).
  double dev_loss = std::numeric_limits<double>::quiet_NaN();
  double dev_wer = std::numeric_limits<double>::quiet_NaN();  // vanilla (diffusion), greedy (ar) or prior (ctc)
  int skipped = 0;       // zero-mask draws (diffusion) or infeasible targets (ctc)
  double cpu_seconds = 0.0;
};

nlohmann::json to_json(const EpochLog& log);

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  // Called after each completed epoch with the updated info.
  std::function<void(const AsrModel<float>&, const CheckpointInfo&)> on_checkpoint;
};

// Linear warm-up to peak, then cosine decay to peak * final_frac at total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, int warmup_steps, double peak, double final_frac);

// Independent per-token deletion, substitution and insertion, each at rate/3.
std::vector<int> corrupt_tokens(std::span<const int> ids, double rate, int num_chars, std::mt19937_64& rng);

// Trains encoder, adapter and denoiser until info.epochs_done reaches
// train.epochs (diffusion) or train.ar_epochs (ar). Resumes from
// info.epochs_done; each epoch draws from its own derived RNG stream.
void train_denoiser(AsrModel<float>& model, CheckpointInfo& info, const Corpus& corpus, const TrainHooks& hooks = {});

// Trains the CTC head on frozen encoder outputs for train.ctc_epochs and
// sets info.ctc_hash. Returns the final dev prior WER.
double train_ctc(AsrModel<float>& model, CheckpointInfo& info, const Corpus& corpus, const TrainHooks& hooks = {});

// Mean per-utterance loss on the dev set with a fixed noise stream.
double dev_loss(const AsrModel<float>& model, const RunConfig& cfg, const std::vector<SyntheticUtterance>& dev);

}  // namespace mdasr
