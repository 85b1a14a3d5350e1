#pragma once

#include <random>

#include "mdasr/config.hpp"
#include "mdasr/model.hpp"

namespace mdasr::testing {

inline ModelConfig tiny_model_config(int layers = 2) {
  ModelConfig cfg;
  cfg.encoder = {4, 6, 8, false};
  cfg.denoiser.layers = layers;
  cfg.denoiser.heads = 2;
  cfg.denoiser.d_model = 8;
  cfg.denoiser.mlp_hidden = 12;
  cfg.denoiser.max_answer_len = 10;
  cfg.denoiser.max_acoustic_len = 10;
  cfg.seed = 99;
  return cfg;
}

inline CorpusSpec tiny_corpus_spec() {
  CorpusSpec spec;
  spec.d_acoustic = 4;
  spec.n_train = 10;
  spec.n_dev = 4;
  spec.n_test = 4;
  spec.min_len = 3;
  spec.max_len = 6;
  return spec;
}

// Tiny end-to-end run: trains in well under a second per epoch.
inline RunConfig tiny_run_config() {
  RunConfig c;
  c.seed = 99;
  c.corpus = tiny_corpus_spec();
  c.encoder.d_enc = 6;
  c.denoiser = tiny_model_config().denoiser;
  c.denoiser.max_acoustic_len = 16;
  c.scheduler.fixed_len = c.denoiser.max_answer_len;
  c.train.epochs = 1;
  c.train.batch_size = 4;
  c.train.warmup_steps = 2;
  c.train.dev_eval_utts = 4;
  c.train.ctc_epochs = 1;
  c.train.ar_epochs = 1;
  c.resolve();
  c.validate();
  return c;
}

}  // namespace mdasr::testing
