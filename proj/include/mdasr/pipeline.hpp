#pragma once

// Dataset and checkpoint management shared by the CLI and the acceptance run.

#include <functional>
#include <string>

#include "mdasr/checkpoint.hpp"
#include "mdasr/config.hpp"
#include "mdasr/synthdata.hpp"
#include "mdasr/trainer.hpp"

namespace mdasr {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Hash of the settings that determine the corpus bytes.
std::string corpus_hash(const RunConfig& cfg);

// Writes the three splits and manifest.json (config hash + resolved corpus keys).
void generate_dataset(const RunConfig& cfg, const std::string& dir);
// Throws DatasetError if the directory is missing or was generated from other settings.
Corpus load_dataset(const RunConfig& cfg, const std::string& dir);
// Loads when the manifest matches, generates otherwise.
Corpus ensure_dataset(const RunConfig& cfg, const std::string& dir);

enum class ModelVariant { kDiffusion, kDiffusionNoPrompt, kAr };

ModelVariant parse_variant(const std::string& which, bool no_prompt);
// Base config adjusted for the variant (prompt region off, causal mode).
RunConfig variant_config(const RunConfig& base, ModelVariant v);
std::string checkpoint_path(const RunConfig& base, ModelVariant v);

struct TrainRequest {
  bool train_ctc = true;  // diffusion variants only
  bool allow_training = true;
  std::function<void(const EpochLog&)> on_epoch;
  std::string metrics_path;  // per-epoch JSONL; appended
};

// Loads the variant's checkpoint, resuming or running training when it is
// missing or incomplete. Refuses a checkpoint whose training hash differs.
LoadedModel obtain_model(const RunConfig& base, ModelVariant v, const Corpus& corpus, const TrainRequest& req);

}  // namespace mdasr
