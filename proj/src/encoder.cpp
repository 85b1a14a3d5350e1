#include "mdasr/encoder.hpp"

#include <cmath>

namespace mdasr {

template <typename T>
void SpeechEncoder<T>::register_params(ParamStore<T>& store, const EncoderConfig& cfg, std::mt19937_64& rng) {
  store.add_normal("enc.w1", {cfg.d_acoustic, cfg.d_enc}, 1.0 / std::sqrt(cfg.d_acoustic), rng);
  store.add_constant("enc.b1", {cfg.d_enc}, T{0});
  store.add_normal("enc.w2", {cfg.d_enc, cfg.d_enc}, 1.0 / std::sqrt(cfg.d_enc), rng);
  store.add_constant("enc.b2", {cfg.d_enc}, T{0});
}

template <typename T>
SpeechEncoder<T>::SpeechEncoder(const ParamStore<T>& store, const EncoderConfig& cfg)
    : cfg_(cfg),
      w1_(store.get("enc.w1")),
      b1_(store.get("enc.b1")),
      w2_(store.get("enc.w2")),
      b2_(store.get("enc.b2")) {}

template <typename T>
Var<T> SpeechEncoder<T>::encode(const Var<T>& frames) const {
  if (frames->value.rows() < kAdapterKernel)
    throw DimensionError("encode: utterance has " + std::to_string(frames->value.rows()) +
                         " frames, at least 3 are required");
  if (frames->value.cols() != cfg_.d_acoustic)
    throw DimensionError("encode: expected " + std::to_string(cfg_.d_acoustic) + " acoustic dims, got " +
                         std::to_string(frames->value.cols()));
  Var<T> h = gelu(add_bias(matmul(frames, w1_), b1_));
  return add(h, gelu(add_bias(matmul(h, w2_), b2_)));
}

template <typename T>
void Adapter<T>::register_params(ParamStore<T>& store, const EncoderConfig& cfg, std::mt19937_64& rng) {
  const int k = kAdapterKernel * cfg.d_enc;
  store.add_normal("adapter.conv_w", {k, cfg.d_enc}, 1.0 / std::sqrt(k), rng);
  store.add_constant("adapter.conv_b", {cfg.d_enc}, T{0});
  store.add_normal("adapter.w1", {cfg.d_enc, cfg.d_model}, 1.0 / std::sqrt(cfg.d_enc), rng);
  store.add_constant("adapter.b1", {cfg.d_model}, T{0});
  store.add_normal("adapter.w2", {cfg.d_model, cfg.d_model}, 1.0 / std::sqrt(cfg.d_model), rng);
  store.add_constant("adapter.b2", {cfg.d_model}, T{0});
}

template <typename T>
Adapter<T>::Adapter(const ParamStore<T>& store, const EncoderConfig& cfg)
    : cfg_(cfg),
      conv_w_(store.get("adapter.conv_w")),
      conv_b_(store.get("adapter.conv_b")),
      w1_(store.get("adapter.w1")),
      b1_(store.get("adapter.b1")),
      w2_(store.get("adapter.w2")),
      b2_(store.get("adapter.b2")) {}

template <typename T>
Var<T> Adapter<T>::conv_downsample(const Var<T>& enc) const {
  return add_bias(matmul(conv_windows(enc, kAdapterKernel, kAdapterStride), conv_w_), conv_b_);
}

template <typename T>
Var<T> Adapter<T>::adapt(const Var<T>& enc) const {
  Var<T> c = conv_downsample(enc);
  return add_bias(matmul(gelu(add_bias(matmul(c, w1_), b1_)), w2_), b2_);
}

template class SpeechEncoder<float>;
template class SpeechEncoder<double>;
template class Adapter<float>;
template class Adapter<double>;

}  // namespace mdasr
