#pragma once

// Checkpoint container:
//   "MDASR1" | u32 header length | JSON header | u32 blob count |
//   per blob: u16 name length, name, u8 ndim, u32 dims..., f32 LE data.
// Parameters are followed by their AdamW moments ("<name>#m", "<name>#v").

#include <memory>
#include <string>

#include "json.hpp"
#include "mdasr/config.hpp"
#include "mdasr/model.hpp"

namespace mdasr {

inline constexpr char kCheckpointMagic[] = "MDASR1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointInfo {
  std::string kind = "diffusion";  // diffusion | ar
  RunConfig config;                // effective config the weights were trained with
  std::string training_hash;
  std::string ctc_hash;  // empty until the CTC head is trained
  int epochs_done = 0;
  double train_cpu_seconds = 0.0;
  double ctc_cpu_seconds = 0.0;
  std::string created_at;

  bool ctc_trained() const { return !ctc_hash.empty(); }
};

struct LoadedModel {
  CheckpointInfo info;
  std::unique_ptr<AsrModel<float>> model;
};

void save_checkpoint(const std::string& path, const AsrModel<float>& model, const CheckpointInfo& info);
LoadedModel load_checkpoint(const std::string& path);
// Header only.
CheckpointInfo read_checkpoint_info(const std::string& path);

std::string utc_timestamp();

}  // namespace mdasr
