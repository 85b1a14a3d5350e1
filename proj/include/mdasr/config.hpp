#pragma once

// One flat JSON document ("section.key": value) holding every setting of a
// run. Unknown keys are rejected; missing keys keep their defaults.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdasr/model.hpp"
#include "mdasr/scheduler.hpp"
#include "mdasr/synthdata.hpp"

namespace mdasr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  double lr_peak = 2e-3;
  double lr_final_frac = 0.05;
  int warmup_steps = 200;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global norm; 0 disables
  std::string loss_normalization = "answer_width";  // or "masked_count"
  std::string t_weighting = "uniform";  // or "inverse_t"
  bool random_width = true;
  double prior_regime_prob = 0.3;
  double prior_corrupt_max = 0.15;
  int dev_eval_utts = 32;
  int ctc_epochs = 15;
  double ctc_lr = 3e-3;
  int ar_epochs = 20;
};

struct BenchConfig {
  std::vector<double> sweep_taus{0.6, 0.7, 0.8, 0.9, 0.95};
  std::string split = "test";
  int max_utts = 0;  // 0: whole split
  int workers = 1;
};

struct PathsConfig {
  std::string data_dir = "data";
  std::string checkpoint_dir = "checkpoints";
  std::string run_root = "runs";
};

struct RunConfig {
  std::uint64_t seed = 1234;
  CorpusSpec corpus;
  EncoderConfig encoder;
  DenoiserConfig denoiser;
  SchedulerConfig scheduler;
  TrainConfig train;
  BenchConfig bench;
  PathsConfig paths;

  RunConfig();
  void validate() const;
  // Corpus seed and shared widths follow the top-level settings.
  void resolve();
  ModelConfig model_config() const;
};

nlohmann::json to_flat_json(const RunConfig& cfg);
// Starts from defaults and applies every key of doc. Throws ConfigError on
// unknown keys or wrong value types.
RunConfig from_flat_json(const nlohmann::json& doc);

// Reads a config file (an absent path gives the defaults) and applies the
// MDASR_SEED environment override.
RunConfig load_config(const std::string& path);

// FNV-1a over the canonical dump of the keys under the given prefixes (all
// keys when prefixes is empty) minus the excluded prefixes, as 16 hex digits.
std::string config_hash(const RunConfig& cfg, const std::vector<std::string>& prefixes = {},
                        const std::vector<std::string>& exclude = {});
// Keys that determine the trained denoiser (or AR) weights.
std::string training_hash(const RunConfig& cfg);
// Keys that determine the CTC head trained on top of them.
std::string ctc_hash(const RunConfig& cfg);

}  // namespace mdasr
