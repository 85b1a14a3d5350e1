#pragma once

// Toy speech encoder and the conv + linear adapter that maps encoder frames to
// the denoiser width at half the frame rate.

#include <random>

#include "mdasr/ops.hpp"
#include "mdasr/params.hpp"

namespace mdasr {

inline constexpr int kAdapterKernel = 3;
inline constexpr int kAdapterStride = 2;

struct EncoderConfig {
  int d_acoustic = 16;
  int d_enc = 32;
  int d_model = 64;
  bool freeze_encoder = false;
};

// Conditioning features A fed to the denoiser, [T_adapted x d_model].
struct AcousticFeatures {
  Tensor<float> features;
  double source_duration_s = 0.0;

  int length() const { return features.rows(); }
};

inline int adapted_length(int encoded_frames) {
  return conv_output_length(encoded_frames, kAdapterKernel, kAdapterStride);
}

// Position-wise two-layer MLP with a residual connection.
template <typename T>
class SpeechEncoder {
 public:
  static void register_params(ParamStore<T>& store, const EncoderConfig& cfg, std::mt19937_64& rng);
  SpeechEncoder(const ParamStore<T>& store, const EncoderConfig& cfg);

  // frames [T x d_acoustic] -> [T x d_enc]; requires T >= 3.
  Var<T> encode(const Var<T>& frames) const;

 private:
  EncoderConfig cfg_;
  Var<T> w1_, b1_, w2_, b2_;
};

template <typename T>
class Adapter {
 public:
  static void register_params(ParamStore<T>& store, const EncoderConfig& cfg, std::mt19937_64& rng);
  Adapter(const ParamStore<T>& store, const EncoderConfig& cfg);

  // Strided temporal convolution (kernel 3, stride 2), [T x d_enc] -> [T' x d_enc].
  Var<T> conv_downsample(const Var<T>& enc) const;
  // Convolution followed by two linear layers, [T x d_enc] -> [T' x d_model].
  Var<T> adapt(const Var<T>& enc) const;

 private:
  EncoderConfig cfg_;
  Var<T> conv_w_, conv_b_, w1_, b1_, w2_, b2_;
};

}  // namespace mdasr
