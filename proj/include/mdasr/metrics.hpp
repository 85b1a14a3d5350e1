#pragma once

// Word error rate by unit-cost edit distance.

#include <string>
#include <string_view>
#include <vector>

namespace mdasr {

struct EditCounts {
  long substitutions = 0;
  long deletions = 0;
  long insertions = 0;
  long ref_words = 0;

  long errors() const { return substitutions + deletions + insertions; }
  EditCounts& operator+=(const EditCounts& o);
};

std::vector<std::string> split_words(std::string_view text);

// Minimal edit alignment; among equal-cost alignments the counts are those
// of a fixed tie order (substitution, then deletion, then insertion).
EditCounts edit_counts(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// errors / |ref|. An empty reference counts as length 1.
double wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// Pooled corpus WER in percent and the mean of per-utterance rates.
struct CorpusWer {
  EditCounts totals;
  double pooled_percent = 0.0;
  double mean_utterance_percent = 0.0;
};

CorpusWer corpus_wer(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

}  // namespace mdasr
