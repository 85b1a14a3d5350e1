#include "mdasr/metrics.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace mdasr {

EditCounts& EditCounts::operator+=(const EditCounts& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  ref_words += o.ref_words;
  return *this;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

EditCounts edit_counts(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  // Two rolling rows of (cost, subs, dels, ins).
  struct Cell {
    long cost, s, d, i;
  };
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {static_cast<long>(j), 0, 0, static_cast<long>(j)};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {static_cast<long>(i), 0, static_cast<long>(i), 0};
    for (std::size_t j = 1; j <= m; ++j) {
      const bool same = ref[i - 1] == hyp[j - 1];
      Cell diag = prev[j - 1];
      diag.cost += same ? 0 : 1;
      diag.s += same ? 0 : 1;
      Cell del = prev[j];
      ++del.cost;
      ++del.d;
      Cell ins = cur[j - 1];
      ++ins.cost;
      ++ins.i;
      Cell best = diag;
      if (del.cost < best.cost) best = del;
      if (ins.cost < best.cost) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cell& c = prev[m];
  return {c.s, c.d, c.i, static_cast<long>(n)};
}

double wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  const EditCounts c = edit_counts(hyp, ref);
  return static_cast<double>(c.errors()) / std::max<long>(1, c.ref_words);
}

CorpusWer corpus_wer(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("corpus_wer: hypothesis and reference counts differ");
  CorpusWer out;
  double rate_sum = 0.0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const EditCounts c = edit_counts(split_words(hyps[k]), split_words(refs[k]));
    out.totals += c;
    rate_sum += static_cast<double>(c.errors()) / std::max<long>(1, c.ref_words);
  }
  out.pooled_percent = 100.0 * out.totals.errors() / std::max<long>(1, out.totals.ref_words);
  out.mean_utterance_percent = refs.empty() ? 0.0 : 100.0 * rate_sum / refs.size();
  return out;
}

}  // namespace mdasr
