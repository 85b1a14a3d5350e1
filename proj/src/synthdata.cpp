#include "mdasr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace mdasr {

namespace {

constexpr double kFrameQuantum = 1e-4;

// Stream tags for derived_rng.
constexpr std::uint64_t kStreamPrototypes = 1;
constexpr std::uint64_t kStreamBigram = 2;
constexpr std::uint64_t kStreamTranscripts = 3;
constexpr std::uint64_t kStreamFrames = 4;

double quantize(double x) { return std::round(x / kFrameQuantum) * kFrameQuantum; }

// Row 0 is the start state; row 1 + c follows character c.
std::vector<std::vector<double>> bigram_table(const CorpusSpec& spec, const Vocab& vocab) {
  auto rng = derived_rng(spec.seed, kStreamBigram, 0);
  std::normal_distribution<double> normal(0.0, 1.5);
  const int c = vocab.num_chars();
  const int space = vocab.chars().find(' ') == std::string::npos ? -1 : vocab.id_of(' ');
  std::vector<std::vector<double>> table(c + 1, std::vector<double>(c, 0.0));
  for (int prev = -1; prev < c; ++prev) {
    auto& row = table[prev + 1];
    double letters = 0.0;
    for (int next = 0; next < c; ++next) {
      if (next == space) continue;
      row[next] = std::exp(normal(rng));
      letters += row[next];
    }
    // Words average about five characters.
    if (space >= 0 && prev >= 0 && prev != space) row[space] = letters * 0.25;
  }
  return table;
}

std::string sample_transcript(const std::vector<std::vector<double>>& bigram, const CorpusSpec& spec,
                              const Vocab& vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len_dist(spec.min_len, spec.max_len);
  const int len = len_dist(rng);
  const int c = vocab.num_chars();
  const int space = vocab.chars().find(' ') == std::string::npos ? -1 : vocab.id_of(' ');
  std::string out;
  int prev = -1;
  std::vector<double> w(c);
  for (int i = 0; i < len; ++i) {
    w = bigram[prev + 1];
    if (prev >= 0) w[prev] = 0.0;  // no immediate repeats: frame runs stay unambiguous
    if (i == len - 1 && space >= 0) w[space] = 0.0;
    std::discrete_distribution<int> pick(w.begin(), w.end());
    const int next = pick(rng);
    out.push_back(vocab.char_of(next));
    prev = next;
  }
  return out;
}

}  // namespace

void CorpusSpec::validate() const {
  if (n_train < 0 || n_dev < 0 || n_test < 0) throw std::invalid_argument("corpus: negative split size");
  if (noise_sigma < 0) throw std::invalid_argument("corpus: noise_sigma must be >= 0");
  if (d_acoustic < 1) throw std::invalid_argument("corpus: d_acoustic must be >= 1");
  if (frame_rate_hz <= 0) throw std::invalid_argument("corpus: frame_rate_hz must be > 0");
  if (min_len < 1 || max_len < min_len) throw std::invalid_argument("corpus: invalid transcript length range");
  if (min_emit < 1 || max_emit < min_emit) throw std::invalid_argument("corpus: invalid emission count range");
}

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

Tensor<double> character_prototypes(const CorpusSpec& spec, const Vocab& vocab) {
  auto rng = derived_rng(spec.seed, kStreamPrototypes, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<double> protos = Tensor<double>::matrix(vocab.num_chars(), spec.d_acoustic);
  for (int c = 0; c < vocab.num_chars(); ++c) {
    double norm = 0.0;
    for (auto& v : protos.row(c)) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : protos.row(c)) v = quantize(v / norm);
  }
  return protos;
}

SyntheticUtterance text_to_frames(const std::string& transcript, const CorpusSpec& spec, const Vocab& vocab,
                                  std::mt19937_64& rng, std::optional<int> forced_emit) {
  const std::vector<int> ids = vocab.encode(transcript);
  const Tensor<double> protos = character_prototypes(spec, vocab);
  std::uniform_int_distribution<int> emit_dist(spec.min_emit, spec.max_emit);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0 ? spec.noise_sigma : 1.0);

  std::vector<int> counts(ids.size());
  int total = 0;
  for (auto& k : counts) {
    k = forced_emit ? *forced_emit : emit_dist(rng);
    total += k;
  }
  SyntheticUtterance utt;
  utt.transcript = transcript;
  utt.frames = Tensor<double>::matrix(total, spec.d_acoustic);
  int row = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (int e = 0; e < counts[i]; ++e, ++row) {
      for (int d = 0; d < spec.d_acoustic; ++d) {
        const double n = spec.noise_sigma > 0 ? noise(rng) : 0.0;
        utt.frames.at(row, d) = quantize(protos.at(ids[i], d) + n);
      }
    }
  }
  utt.duration_s = total / spec.frame_rate_hz;
  return utt;
}

Corpus gen_corpus(const CorpusSpec& spec, const Vocab& vocab) {
  spec.validate();
  const auto bigram = bigram_table(spec, vocab);
  const std::size_t wanted = static_cast<std::size_t>(spec.n_train) + spec.n_dev + spec.n_test;
  const std::size_t max_attempts = 100 * wanted + 1000;
  auto rng = derived_rng(spec.seed, kStreamTranscripts, 0);
  std::set<std::string> seen;
  std::vector<std::string> transcripts;
  for (std::size_t attempt = 0; transcripts.size() < wanted; ++attempt) {
    if (attempt >= max_attempts)
      throw std::runtime_error("corpus: requested " + std::to_string(wanted) +
                               " utterances exceeds the unique-transcript capacity of the generator (found " +
                               std::to_string(transcripts.size()) + ")");
    std::string t = sample_transcript(bigram, spec, vocab, rng);
    if (seen.insert(t).second) transcripts.push_back(std::move(t));
  }

  Corpus corpus;
  for (std::size_t i = 0; i < wanted; ++i) {
    auto frng = derived_rng(spec.seed, kStreamFrames, i);
    SyntheticUtterance utt = text_to_frames(transcripts[i], spec, vocab, frng);
    char buf[32];
    if (i < static_cast<std::size_t>(spec.n_train)) {
      std::snprintf(buf, sizeof buf, "train-%05zu", i);
      utt.id = buf;
      corpus.train.push_back(std::move(utt));
    } else if (i < static_cast<std::size_t>(spec.n_train + spec.n_dev)) {
      std::snprintf(buf, sizeof buf, "dev-%05zu", i - spec.n_train);
      utt.id = buf;
      corpus.dev.push_back(std::move(utt));
    } else {
      std::snprintf(buf, sizeof buf, "test-%05zu", i - spec.n_train - spec.n_dev);
      utt.id = buf;
      corpus.test.push_back(std::move(utt));
    }
  }
  return corpus;
}

std::string nearest_prototype_transcript(const SyntheticUtterance& utt, const Tensor<double>& prototypes,
                                         const Vocab& vocab) {
  std::string out;
  int prev = -1;
  for (int r = 0; r < utt.frames.rows(); ++r) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < prototypes.rows(); ++c) {
      double d = 0.0;
      for (int k = 0; k < prototypes.cols(); ++k) {
        const double diff = utt.frames.at(r, k) - prototypes.at(c, k);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best != prev) out.push_back(vocab.char_of(best));
    prev = best;
  }
  return out;
}

void write_jsonl(const std::string& path, const std::vector<SyntheticUtterance>& utts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& u : utts) {
    nlohmann::ordered_json rec;
    rec["id"] = u.id;
    rec["transcript"] = u.transcript;
    auto frames = nlohmann::ordered_json::array();
    for (int r = 0; r < u.frames.rows(); ++r) {
      const auto row = u.frames.row(r);
      frames.push_back(std::vector<double>(row.begin(), row.end()));
    }
    rec["frames"] = std::move(frames);
    rec["duration_s"] = u.duration_s;
    out << rec.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::vector<SyntheticUtterance> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  std::vector<SyntheticUtterance> utts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      SyntheticUtterance u;
      u.id = rec.at("id").get<std::string>();
      u.transcript = rec.at("transcript").get<std::string>();
      const auto& frames = rec.at("frames");
      const int rows = static_cast<int>(frames.size());
      const int cols = rows ? static_cast<int>(frames.at(0).size()) : 0;
      u.frames = Tensor<double>::matrix(rows, cols);
      for (int r = 0; r < rows; ++r) {
        if (static_cast<int>(frames[r].size()) != cols) throw DimensionError("ragged frames array");
        for (int c = 0; c < cols; ++c) u.frames.at(r, c) = frames[r][c].get<double>();
      }
      u.duration_s = rec.at("duration_s").get<double>();
      utts.push_back(std::move(u));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return utts;
}

void write_corpus(const std::string& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  write_jsonl(dir + "/train.jsonl", corpus.train);
  write_jsonl(dir + "/dev.jsonl", corpus.dev);
  write_jsonl(dir + "/test.jsonl", corpus.test);
}

Corpus read_corpus(const std::string& dir) {
  Corpus c;
  c.train = read_jsonl(dir + "/train.jsonl");
  c.dev = read_jsonl(dir + "/dev.jsonl");
  c.test = read_jsonl(dir + "/test.jsonl");
  return c;
}

}  // namespace mdasr
