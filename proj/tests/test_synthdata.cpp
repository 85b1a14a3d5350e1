#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mdasr/synthdata.hpp"

using namespace mdasr;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("mdasr_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(TextToFrames, ZeroNoiseRowsEqualPrototype) {
  Vocab vocab;
  CorpusSpec spec;
  spec.noise_sigma = 0.0;
  std::mt19937_64 rng(1);
  auto utt = text_to_frames("a", spec, vocab, rng, 2);
  const auto protos = character_prototypes(spec, vocab);
  ASSERT_EQ(utt.num_frames(), 2);
  for (int r = 0; r < 2; ++r)
    for (int d = 0; d < spec.d_acoustic; ++d) EXPECT_EQ(utt.frames.at(r, d), protos.at(vocab.id_of('a'), d));
}

TEST(TextToFrames, FrameCountBoundsAndDuration) {
  Vocab vocab;
  CorpusSpec spec;
  std::mt19937_64 rng(2);
  for (const std::string t : {"hello", "a b", "the quick brown fox"}) {
    auto utt = text_to_frames(t, spec, vocab, rng);
    const int n = static_cast<int>(t.size());
    EXPECT_GE(utt.num_frames(), 2 * n);
    EXPECT_LE(utt.num_frames(), 4 * n);
    EXPECT_DOUBLE_EQ(utt.duration_s, utt.num_frames() / 25.0);
  }
}

TEST(TextToFrames, DeterministicGivenSeed) {
  Vocab vocab;
  CorpusSpec spec;
  std::mt19937_64 r1(3), r2(3);
  auto a = text_to_frames("prior guided", spec, vocab, r1);
  auto b = text_to_frames("prior guided", spec, vocab, r2);
  EXPECT_EQ(a.frames.data, b.frames.data);
}

TEST(TextToFrames, UnknownCharacterThrows) {
  Vocab vocab;
  CorpusSpec spec;
  std::mt19937_64 rng(4);
  EXPECT_THROW(text_to_frames("Hello!", spec, vocab, rng), std::invalid_argument);
}

TEST(Prototypes, UnitNormAndDistinct) {
  Vocab vocab;
  CorpusSpec spec;
  auto p = character_prototypes(spec, vocab);
  for (int c = 0; c < p.rows(); ++c) {
    double n = 0;
    for (double v : p.row(c)) n += v * v;
    EXPECT_NEAR(n, 1.0, 1e-3);
  }
  std::set<std::vector<double>> rows;
  for (int c = 0; c < p.rows(); ++c) rows.insert({p.row(c).begin(), p.row(c).end()});
  EXPECT_EQ(static_cast<int>(rows.size()), p.rows());
}

TEST(GenCorpus, SplitSizesLengthsAndDisjointness) {
  Vocab vocab;
  CorpusSpec spec;
  spec.n_train = 100;
  spec.n_dev = 20;
  spec.n_test = 30;
  auto c = gen_corpus(spec, vocab);
  EXPECT_EQ(c.train.size(), 100u);
  EXPECT_EQ(c.dev.size(), 20u);
  EXPECT_EQ(c.test.size(), 30u);
  std::set<std::string> seen;
  for (const auto* split : {&c.train, &c.dev, &c.test})
    for (const auto& u : *split) {
      EXPECT_TRUE(seen.insert(u.transcript).second) << u.transcript;
      EXPECT_GE(u.transcript.size(), 5u);
      EXPECT_LE(u.transcript.size(), 30u);
      EXPECT_NE(u.transcript.back(), ' ');
      EXPECT_GT(u.duration_s, 0.0);
      for (std::size_t i = 1; i < u.transcript.size(); ++i) EXPECT_NE(u.transcript[i], u.transcript[i - 1]);
    }
}

TEST(GenCorpus, CapacityExceededThrows) {
  Vocab vocab("ab", 4);
  CorpusSpec spec;
  spec.min_len = 2;
  spec.max_len = 2;
  spec.n_train = 10;
  EXPECT_THROW(gen_corpus(spec, vocab), std::runtime_error);
}

TEST(GenCorpus, ZeroNoiseIsSeparable) {
  Vocab vocab;
  CorpusSpec spec;
  spec.noise_sigma = 0.0;
  spec.n_train = 200;
  spec.n_dev = 0;
  spec.n_test = 0;
  auto c = gen_corpus(spec, vocab);
  const auto protos = character_prototypes(spec, vocab);
  for (const auto& u : c.train) EXPECT_EQ(nearest_prototype_transcript(u, protos, vocab), u.transcript);
}

TEST(GenCorpus, FilesAreByteIdenticalAcrossRuns) {
  Vocab vocab;
  CorpusSpec spec;
  spec.n_train = 100;
  spec.n_dev = 10;
  spec.n_test = 10;
  auto d1 = scratch_dir("corpus_a"), d2 = scratch_dir("corpus_b");
  write_corpus(d1.string(), gen_corpus(spec, vocab));
  write_corpus(d2.string(), gen_corpus(spec, vocab));
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl"}) EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
  std::ifstream in(d1 / "train.jsonl");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 100);
}

TEST(Jsonl, RoundTripAndFieldNames) {
  Vocab vocab;
  CorpusSpec spec;
  spec.n_train = 5;
  spec.n_dev = 0;
  spec.n_test = 0;
  auto c = gen_corpus(spec, vocab);
  auto dir = scratch_dir("jsonl");
  const std::string path = (dir / "x.jsonl").string();
  write_jsonl(path, c.train);
  const std::string first = slurp(path).substr(0, 200);
  EXPECT_EQ(first.rfind("{\"id\":", 0), 0u);
  EXPECT_NE(first.find("\"transcript\":"), std::string::npos);
  EXPECT_NE(first.find("\"frames\":"), std::string::npos);
  auto back = read_jsonl(path);
  ASSERT_EQ(back.size(), c.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, c.train[i].id);
    EXPECT_EQ(back[i].transcript, c.train[i].transcript);
    EXPECT_EQ(back[i].frames.shape, c.train[i].frames.shape);
    EXPECT_EQ(back[i].frames.data, c.train[i].frames.data);
    EXPECT_EQ(back[i].duration_s, c.train[i].duration_s);
  }
}

TEST(Jsonl, MalformedLineReportsLocation) {
  auto dir = scratch_dir("bad_jsonl");
  const std::string path = (dir / "bad.jsonl").string();
  std::ofstream(path) << "{\"id\":\"a\",\"transcript\":\"ab\",\"frames\":[[0]],\"duration_s\":0.04}\n{oops\n";
  try {
    read_jsonl(path);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos) << e.what();
  }
}
