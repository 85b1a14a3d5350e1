#pragma once

// Evaluation of recognizer systems on a split: WER, NFE, RTF analog, steps.
// Threshold sweeps and the ablation table are lists of systems.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdasr/config.hpp"
#include "mdasr/model.hpp"
#include "mdasr/scheduler.hpp"

namespace mdasr {

enum class SystemKind { kCtcPrior, kVanilla, kAdaptive, kAr };

// Model slots a system can draw from.
inline constexpr char kDiffusionModel[] = "diffusion";
inline constexpr char kNoPromptModel[] = "diffusion-noprompt";
inline constexpr char kArModel[] = "ar";

struct SystemSpec {
  std::string name;
  SystemKind kind = SystemKind::kAdaptive;
  SchedulerConfig scheduler;
  std::string model = kDiffusionModel;
};

class MissingModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelSet {
  std::map<std::string, const AsrModel<float>*> models;
  // Throws MissingModelError naming the system.
  const AsrModel<float>& require(const SystemSpec& system) const;
};

struct UttResult {
  std::string id;
  std::string reference;
  std::string hypothesis;
  int steps = 0;
  int nfe = 0;
  int initial_len = 0;
  int step1_fixed = 0;  // positions fixed by the first denoising step
  bool prior_used = false;
  bool aborted = false;
  std::vector<int> fixed_per_step;
  std::vector<int> pruned_per_step;
  std::int64_t wall_ns = 0;
  double duration_s = 0.0;
};

struct ReportRow {
  std::string system;
  double wer = 0.0;  // pooled, percent
  double mean_nfe = 0.0;
  double rtf_analog = 0.0;
  double mean_steps = 0.0;
  int n_utts = 0;
};

struct SystemRun {
  SystemSpec system;
  ReportRow row;
  std::vector<UttResult> utts;
};

struct EvalReport {
  std::string config_hash;
  bool timing_single_threaded = true;
  std::vector<SystemRun> runs;

  const SystemRun& find(const std::string& system) const;
};

// One utterance, timed from encoder input to transcript.
UttResult recognize(const SystemSpec& system, const AsrModel<float>& model, const SyntheticUtterance& utt);

// workers > 1 parallelizes across utterances (accuracy mode); timing columns
// are then not comparable across systems.
SystemRun run_system(const SystemSpec& system, const ModelSet& models, const std::vector<SyntheticUtterance>& utts,
                     int workers = 1);

EvalReport evaluate(const std::vector<SystemSpec>& systems, const ModelSet& models,
                    const std::vector<SyntheticUtterance>& utts, const RunConfig& cfg, int workers = 1);

// ctc-prior-only, vanilla-diffusion, adaptive, ar-baseline.
std::vector<SystemSpec> bench_systems(const RunConfig& cfg);
// One adaptive system per tau, named "tau=<value>".
std::vector<SystemSpec> sweep_systems(const RunConfig& cfg, const std::vector<double>& taus);
// full, w/o prior, w/o pruning, w/o prompt-region, vanilla, vanilla+confidence.
std::vector<SystemSpec> ablation_systems(const RunConfig& cfg);

inline constexpr char kCsvHeader[] = "system,wer,mean_nfe,rtf_analog,mean_steps,n_utts";
void write_csv(const std::string& path, const EvalReport& report);
std::string csv_row(const ReportRow& row);

// Header line describing the system, then one record per utterance.
void write_trace(const std::string& path, const SystemRun& run, const nlohmann::json& header_extra);
nlohmann::json scheduler_json(const SchedulerConfig& cfg);

}  // namespace mdasr
