#pragma once

// Adaptive denoising: prior initialization, confidence early exit with a top-γ
// fallback, trailing-pad pruning and speech-prefix caching. Also the
// fixed-length vanilla baseline.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdasr/ctc.hpp"
#include "mdasr/denoiser.hpp"
#include "mdasr/vocab.hpp"

namespace mdasr {

struct SchedulerConfig {
  double tau = 0.9;
  int gamma = 1;
  int max_steps = 0;  // 0: twice the initial answer length
  bool use_prior = true;
  bool use_pruning = true;
  bool use_cache = true;
  int fixed_len = 128;
  int vanilla_steps = 0;  // 0: fixed_len
  double margin_frac = 0.25;
  int margin_min = 2;

  void validate() const;
};

// Slack added to the prior length anchor.
int length_margin(int anchor, const SchedulerConfig& cfg);

// One denoising call on the live answer region. Returns logits
// [ids.size() x output classes]. Each call is one NFE.
class LogitsModel {
 public:
  virtual ~LogitsModel() = default;
  virtual Tensor<float> denoise(std::span<const int> ids, CacheMode mode) = 0;
};

// Binds a trained denoiser to one utterance's acoustic features and cache.
class DenoiserLogits : public LogitsModel {
 public:
  DenoiserLogits(const Denoiser<float>& model, Var<float> acoustic) : model_(model), acoustic_(std::move(acoustic)) {}
  Tensor<float> denoise(std::span<const int> ids, CacheMode mode) override;
  const KvCache<float>& cache() const { return cache_; }

 private:
  const Denoiser<float>& model_;
  Var<float> acoustic_;
  KvCache<float> cache_;
};

// Counts invocations of the wrapped model.
class CountingModel : public LogitsModel {
 public:
  explicit CountingModel(LogitsModel& inner) : inner_(inner) {}
  Tensor<float> denoise(std::span<const int> ids, CacheMode mode) override {
    ++calls_;
    return inner_.denoise(ids, mode);
  }
  int calls() const { return calls_; }

 private:
  LogitsModel& inner_;
  int calls_ = 0;
};

enum class PosStatus : std::uint8_t { kMasked, kFixed, kPruned };

struct DecodeState {
  std::vector<PosStatus> status;
  std::vector<int> ids;
  std::vector<float> confidence;  // at the step a position was decided
  int live_len = 0;
  int initial_len = 0;
  int step = 0;
  bool prior_used = false;

  int masked_count() const;
};

struct StepRecord {
  int nfe = 0;
  int selected = 0;  // chosen by threshold or fallback, before pruning
  int fixed = 0;
  int fixed_chars = 0;  // fixed positions holding a character
  int pruned = 0;
  double max_conf = 0.0;
  double mean_conf = 0.0;
  std::int64_t wall_ns = 0;
};

struct ScheduleTrace {
  std::string id;
  std::vector<StepRecord> steps;
  int initial_len = 0;
  int initial_non_masked = 0;
  bool aborted = false;
  bool prior_used = false;
  std::vector<int> tokens;  // decided ids in position order, pads included
  std::string transcript;

  int total_nfe() const;
  int total_fixed() const;
  int total_pruned() const;
};

// With a usable prior: length clamp(anchor + margin, 1, max_answer_len), the
// prior tokens fill the leading positions and everything stays Masked. Without
// one: fixed_len positions of [M].
DecodeState init_state(const std::optional<PriorHypothesis>& prior, const SchedulerConfig& cfg, int max_answer_len,
                       const Vocab& vocab);

// One denoising step. Throws if no Masked position remains.
StepRecord step(DecodeState& state, LogitsModel& model, const SchedulerConfig& cfg, const Vocab& vocab);

// Steps until nothing is Masked or max_steps is hit (trace.aborted).
ScheduleTrace run(DecodeState state, LogitsModel& model, const SchedulerConfig& cfg, const Vocab& vocab);

// All-mask init at fixed_len; each step fixes the k most confident masked
// positions, k = ceil(remaining / remaining_steps). No prior, pruning or cache.
ScheduleTrace vanilla_decode(LogitsModel& model, const SchedulerConfig& cfg, const Vocab& vocab);

// Decided character tokens in order; pads and masks dropped.
std::string transcript_of(const DecodeState& state, const Vocab& vocab);

// Throws std::logic_error describing the first violated trace invariant.
void check_trace(const ScheduleTrace& trace);

}  // namespace mdasr
