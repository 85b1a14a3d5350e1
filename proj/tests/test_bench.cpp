#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "mdasr/bench.hpp"
#include "mdasr/synthdata.hpp"

using namespace mdasr;
using mdasr::testing::tiny_run_config;
namespace fs = std::filesystem;

namespace {

struct BenchFixture : ::testing::Test {
  RunConfig cfg = tiny_run_config();
  Corpus corpus = gen_corpus(cfg.corpus, Vocab());
  AsrModel<float> diffusion{cfg.model_config(), Vocab()};
  std::unique_ptr<AsrModel<float>> ar;
  ModelSet set;

  void SetUp() override {
    RunConfig arc = cfg;
    arc.denoiser.causal = true;
    ar = std::make_unique<AsrModel<float>>(arc.model_config(), Vocab());
    set.models[kDiffusionModel] = &diffusion;
    set.models[kNoPromptModel] = &diffusion;
    set.models[kArModel] = ar.get();
  }

  std::vector<std::string> lines(const std::string& path) {
    std::ifstream in(path);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
  }

  std::string dir() {
    const fs::path p = fs::temp_directory_path() / ("mdasr_bench_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p.string();
  }
};

}  // namespace

TEST_F(BenchFixture, SystemListsHaveTheExpectedRows) {
  const auto b = bench_systems(cfg);
  ASSERT_EQ(b.size(), 4u);
  EXPECT_EQ(b[0].name, "ctc-prior-only");
  EXPECT_EQ(b[1].name, "vanilla-diffusion");
  EXPECT_EQ(b[2].name, "adaptive");
  EXPECT_EQ(b[3].name, "ar-baseline");
  const auto s = sweep_systems(cfg, cfg.bench.sweep_taus);
  ASSERT_EQ(s.size(), 5u);
  EXPECT_EQ(s[0].name, "tau=0.6");
  EXPECT_EQ(s[4].name, "tau=0.95");
  EXPECT_DOUBLE_EQ(s[4].scheduler.tau, 0.95);
  const auto a = ablation_systems(cfg);
  ASSERT_EQ(a.size(), 6u);
  EXPECT_FALSE(a[1].scheduler.use_prior);
  EXPECT_FALSE(a[2].scheduler.use_pruning);
  EXPECT_EQ(a[3].model, kNoPromptModel);
  EXPECT_EQ(a[4].kind, SystemKind::kVanilla);
  EXPECT_FALSE(a[5].scheduler.use_prior || a[5].scheduler.use_pruning || a[5].scheduler.use_cache);
  EXPECT_DOUBLE_EQ(a[5].scheduler.tau, 0.9);
}

TEST_F(BenchFixture, ReportCoversRequestedSystems) {
  const auto all = bench_systems(cfg);
  const std::vector<SystemSpec> two{all[1], all[2]};
  const EvalReport r = evaluate(two, set, corpus.test, cfg);
  ASSERT_EQ(r.runs.size(), 2u);
  for (const auto& run : r.runs) {
    EXPECT_EQ(run.row.n_utts, static_cast<int>(corpus.test.size()));
    EXPECT_GE(run.row.wer, 0.0);
    EXPECT_GT(run.row.rtf_analog, 0.0);
  }
  const std::string path = dir() + "/two.csv";
  write_csv(path, r);
  const auto l = lines(path);
  ASSERT_EQ(l.size(), 4u);
  EXPECT_EQ(l[0].rfind("# config_hash=" + config_hash(cfg), 0), 0u);
  EXPECT_EQ(l[1], kCsvHeader);
  EXPECT_EQ(l[2].rfind("vanilla-diffusion,", 0), 0u);
  EXPECT_EQ(l[3].rfind("adaptive,", 0), 0u);
}

TEST_F(BenchFixture, NfeAccounting) {
  const auto systems = bench_systems(cfg);
  const SystemRun ctc = run_system(systems[0], set, corpus.test);
  const SystemRun van = run_system(systems[1], set, corpus.test);
  const SystemRun ada = run_system(systems[2], set, corpus.test);
  const SystemRun ar = run_system(systems[3], set, corpus.test);
  for (const auto& u : ctc.utts) EXPECT_EQ(u.nfe, 0);
  for (const auto& u : van.utts) {
    EXPECT_EQ(u.nfe, cfg.scheduler.fixed_len);
    EXPECT_EQ(u.steps, u.nfe);
  }
  for (const auto& u : ada.utts) {
    EXPECT_EQ(u.nfe, u.steps);
    EXPECT_GE(u.nfe, 1);
    EXPECT_TRUE(u.prior_used || u.initial_len == cfg.scheduler.fixed_len);
  }
  for (const auto& u : ar.utts) {
    EXPECT_GE(u.nfe, 1);
    EXPECT_LE(u.nfe, cfg.denoiser.max_answer_len);
  }
  SystemSpec zero = systems[2];
  zero.scheduler.tau = 0.0;
  for (const auto& u : run_system(zero, set, corpus.test).utts) EXPECT_EQ(u.steps, 1);
}

TEST_F(BenchFixture, NonTimingColumnsAreDeterministic) {
  const auto systems = ablation_systems(cfg);
  const EvalReport a = evaluate(systems, set, corpus.test, cfg);
  const EvalReport b = evaluate(systems, set, corpus.test, cfg, 3);
  ASSERT_EQ(a.runs.size(), b.runs.size());
  EXPECT_FALSE(b.timing_single_threaded);
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    EXPECT_EQ(a.runs[i].row.wer, b.runs[i].row.wer);
    EXPECT_EQ(a.runs[i].row.mean_nfe, b.runs[i].row.mean_nfe);
    EXPECT_EQ(a.runs[i].row.mean_steps, b.runs[i].row.mean_steps);
    for (std::size_t k = 0; k < a.runs[i].utts.size(); ++k) {
      EXPECT_EQ(a.runs[i].utts[k].hypothesis, b.runs[i].utts[k].hypothesis);
      EXPECT_EQ(a.runs[i].utts[k].fixed_per_step, b.runs[i].utts[k].fixed_per_step);
    }
  }
}

TEST_F(BenchFixture, MissingModelNamesTheSystem) {
  ModelSet partial;
  partial.models[kDiffusionModel] = &diffusion;
  try {
    evaluate(bench_systems(cfg), partial, corpus.test, cfg);
    FAIL();
  } catch (const MissingModelError& e) {
    EXPECT_NE(std::string(e.what()).find("ar-baseline"), std::string::npos);
  }
  ModelSet swapped;
  swapped.models[kArModel] = &diffusion;
  EXPECT_THROW(run_system(bench_systems(cfg)[3], swapped, corpus.test), MissingModelError);
}

TEST_F(BenchFixture, TraceFileLayout) {
  const SystemRun run = run_system(bench_systems(cfg)[2], set, corpus.test);
  const std::string path = dir() + "/trace.jsonl";
  write_trace(path, run, {{"flags", "--tau 0.9"}});
  const auto l = lines(path);
  ASSERT_EQ(l.size(), corpus.test.size() + 1);
  const auto header = nlohmann::json::parse(l[0]);
  EXPECT_EQ(header.at("type"), "header");
  EXPECT_EQ(header.at("system"), "adaptive");
  EXPECT_EQ(header.at("flags"), "--tau 0.9");
  EXPECT_DOUBLE_EQ(header.at("scheduler").at("tau").get<double>(), 0.9);
  for (std::size_t i = 1; i < l.size(); ++i) {
    const auto rec = nlohmann::json::parse(l[i]);
    int fixed = 0, pruned = 0;
    for (int f : rec.at("fixed_per_step")) fixed += f;
    for (int p : rec.at("pruned_per_step")) pruned += p;
    EXPECT_EQ(fixed + pruned, rec.at("initial_len").get<int>());
    EXPECT_EQ(rec.at("nfe").get<int>(), static_cast<int>(rec.at("fixed_per_step").size()));
    EXPECT_EQ(rec.at("id"), corpus.test[i - 1].id);
  }
}

TEST(CsvRow, QuotesAwkwardNames) {
  ReportRow r{"a,b", 1.5, 2, 0.25, 2, 3};
  EXPECT_EQ(csv_row(r), "\"a,b\",1.5000,2.0000,0.25,2.0000,3");
}
