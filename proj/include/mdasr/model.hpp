#pragma once

// Encoder, adapter, denoiser and CTC head sharing one parameter store.

#include <cstdint>
#include <memory>
#include <string>

#include "mdasr/ctc.hpp"
#include "mdasr/denoiser.hpp"
#include "mdasr/encoder.hpp"
#include "mdasr/synthdata.hpp"

namespace mdasr {

struct ModelConfig {
  EncoderConfig encoder;
  DenoiserConfig denoiser;
  std::uint64_t seed = 1234;
};

template <typename T>
class AsrModel {
 public:
  AsrModel(const ModelConfig& cfg, const Vocab& vocab);
  AsrModel(const AsrModel&) = delete;
  AsrModel& operator=(const AsrModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  bool causal() const { return cfg_.denoiser.causal; }

  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  const SpeechEncoder<T>& encoder() const { return encoder_; }
  const Adapter<T>& adapter() const { return adapter_; }
  const Denoiser<T>& denoiser() const { return denoiser_; }
  const CtcHead<T>& ctc() const { return ctc_; }

  Var<T> frames_input(const SyntheticUtterance& utt) const;
  // A = adapter(encoder(frames)).
  Var<T> acoustic_features(const Var<T>& encoded) const { return adapter_.adapt(encoded); }

  // Copies parameter values from a model with identical configuration.
  template <typename U>
  void copy_params_from(const AsrModel<U>& other) {
    store_.copy_from(other.params());
  }

 private:
  ModelConfig cfg_;
  Vocab vocab_;
  ParamStore<T> store_;
  SpeechEncoder<T> encoder_;
  Adapter<T> adapter_;
  Denoiser<T> denoiser_;
  CtcHead<T> ctc_;

  static ParamStore<T> build_store(const ModelConfig& cfg, const Vocab& vocab);
};

}  // namespace mdasr
