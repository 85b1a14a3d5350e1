#pragma once

// Synthetic "speech" corpus. Each character of a transcript emits 2-4 noisy
// copies of a per-character prototype vector, left to right, so frames and
// text are monotonically aligned.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mdasr/tensor.hpp"
#include "mdasr/vocab.hpp"

namespace mdasr {

struct CorpusSpec {
  std::uint64_t seed = 1234;
  int n_train = 2000;
  int n_dev = 200;
  int n_test = 400;
  double noise_sigma = 0.2;
  int d_acoustic = 16;
  double frame_rate_hz = 25.0;
  int min_len = 5;
  int max_len = 30;
  int min_emit = 2;
  int max_emit = 4;

  void validate() const;
};

struct SyntheticUtterance {
  std::string id;
  std::string transcript;
  Tensor<double> frames;  // [T_frames x d_acoustic]
  double duration_s = 0.0;

  int num_frames() const { return frames.rows(); }
};

struct Corpus {
  std::vector<SyntheticUtterance> train, dev, test;
};

// Unit-norm prototype per character, derived only from the corpus seed.
// Values are rounded to the stored frame precision.
Tensor<double> character_prototypes(const CorpusSpec& spec, const Vocab& vocab);

// forced_emit fixes every character's emission count (tests only).
SyntheticUtterance text_to_frames(const std::string& transcript, const CorpusSpec& spec, const Vocab& vocab,
                                  std::mt19937_64& rng, std::optional<int> forced_emit = std::nullopt);

Corpus gen_corpus(const CorpusSpec& spec, const Vocab& vocab);

// Nearest-prototype classification of every frame followed by run collapse.
std::string nearest_prototype_transcript(const SyntheticUtterance& utt, const Tensor<double>& prototypes,
                                         const Vocab& vocab);

// JSONL: one {"id","transcript","frames","duration_s"} record per line.
void write_jsonl(const std::string& path, const std::vector<SyntheticUtterance>& utts);
std::vector<SyntheticUtterance> read_jsonl(const std::string& path);

// Writes train.jsonl, dev.jsonl and test.jsonl under dir.
void write_corpus(const std::string& dir, const Corpus& corpus);
Corpus read_corpus(const std::string& dir);

// Seeded stream for (seed, stream, index); independent of generation order.
std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

}  // namespace mdasr
