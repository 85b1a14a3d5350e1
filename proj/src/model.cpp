#include "mdasr/model.hpp"

namespace mdasr {

template <typename T>
ParamStore<T> AsrModel<T>::build_store(const ModelConfig& cfg, const Vocab& vocab) {
  if (cfg.encoder.d_model != cfg.denoiser.d_model)
    throw std::invalid_argument("model: adapter output width must equal denoiser d_model");
  ParamStore<T> store;
  std::mt19937_64 rng(cfg.seed);
  SpeechEncoder<T>::register_params(store, cfg.encoder, rng);
  Adapter<T>::register_params(store, cfg.encoder, rng);
  Denoiser<T>::register_params(store, cfg.denoiser, vocab, rng);
  CtcHead<T>::register_params(store, cfg.encoder, vocab.ctc_classes(), rng);
  return store;
}

template <typename T>
AsrModel<T>::AsrModel(const ModelConfig& cfg, const Vocab& vocab)
    : cfg_(cfg),
      vocab_(vocab),
      store_(build_store(cfg, vocab)),
      encoder_(store_, cfg.encoder),
      adapter_(store_, cfg.encoder),
      denoiser_(store_, cfg.denoiser, vocab),
      ctc_(store_) {}

template <typename T>
Var<T> AsrModel<T>::frames_input(const SyntheticUtterance& utt) const {
  return constant(utt.frames.template cast<T>());
}

template class AsrModel<float>;
template class AsrModel<double>;

}  // namespace mdasr
