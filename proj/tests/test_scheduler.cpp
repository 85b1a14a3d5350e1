#include <gtest/gtest.h>

#include <functional>

#include "mdasr/scheduler.hpp"

using namespace mdasr;

namespace {

// Logits are a function of (position, current live ids).
class StubModel : public LogitsModel {
 public:
  using Fn = std::function<std::vector<float>(int pos, std::span<const int> ids)>;
  StubModel(int classes, Fn fn) : classes_(classes), fn_(std::move(fn)) {}
  Tensor<float> denoise(std::span<const int> ids, CacheMode mode) override {
    modes.push_back(mode);
    lengths.push_back(static_cast<int>(ids.size()));
    Tensor<float> out = Tensor<float>::matrix(static_cast<int>(ids.size()), classes_);
    for (int i = 0; i < static_cast<int>(ids.size()); ++i) {
      auto row = fn_(i, ids);
      std::copy(row.begin(), row.end(), out.row(i).begin());
    }
    return out;
  }
  std::vector<CacheMode> modes;
  std::vector<int> lengths;

 private:
  int classes_;
  Fn fn_;
};

std::vector<float> peaked(int classes, int cls, float margin) {
  std::vector<float> r(classes, 0.0f);
  r[cls] = margin;
  return r;
}

// One-hot ground truth padded with pads, margin per position.
StubModel oracle_model(const Vocab& vocab, const std::vector<int>& truth, std::vector<float> margins) {
  const int classes = vocab.output_size();
  return StubModel(classes, [=](int pos, std::span<const int>) {
    const int cls = pos < static_cast<int>(truth.size()) ? truth[pos] : vocab.pad();
    return peaked(classes, cls, pos < static_cast<int>(margins.size()) ? margins[pos] : 30.0f);
  });
}

PriorHypothesis prior_of(const Vocab& vocab, const std::string& text) {
  PriorHypothesis p;
  p.tokens = vocab.encode(text);
  p.per_token_confidence.assign(p.tokens.size(), 0.9);
  p.length_anchor = static_cast<int>(p.tokens.size());
  return p;
}

SchedulerConfig base_config() {
  SchedulerConfig cfg;
  cfg.fixed_len = 12;
  return cfg;
}

}  // namespace

TEST(InitState, NoPriorIsAllMaskAtFixedLength) {
  Vocab vocab;
  SchedulerConfig cfg;
  cfg.use_prior = false;
  auto s = init_state(prior_of(vocab, "abc"), cfg, 128, vocab);
  EXPECT_EQ(s.initial_len, 128);
  for (int i = 0; i < 128; ++i) {
    EXPECT_EQ(s.ids[i], vocab.mask());
    EXPECT_EQ(s.status[i], PosStatus::kMasked);
  }
}

TEST(InitState, PriorFillsLeadingPositions) {
  Vocab vocab;
  SchedulerConfig cfg;
  cfg.margin_min = 4;
  auto s = init_state(prior_of(vocab, "abc"), cfg, 48, vocab);
  ASSERT_EQ(s.initial_len, 7);
  EXPECT_EQ(std::vector<int>(s.ids.begin(), s.ids.begin() + 3), vocab.encode("abc"));
  for (int i = 3; i < 7; ++i) EXPECT_EQ(s.ids[i], vocab.mask());
  for (auto st : s.status) EXPECT_EQ(st, PosStatus::kMasked);
  EXPECT_TRUE(s.prior_used);
}

TEST(InitState, MarginAndClamp) {
  SchedulerConfig cfg;
  EXPECT_EQ(length_margin(3, cfg), 2);
  EXPECT_EQ(length_margin(8, cfg), 2);
  EXPECT_EQ(length_margin(9, cfg), 3);
  EXPECT_EQ(length_margin(30, cfg), 8);
  Vocab vocab;
  auto s = init_state(prior_of(vocab, std::string(45, 'a')), cfg, 48, vocab);
  EXPECT_EQ(s.initial_len, 48);
}

TEST(InitState, EmptyPriorFallsBackToAllMask) {
  Vocab vocab;
  SchedulerConfig cfg = base_config();
  auto with_empty = init_state(prior_of(vocab, ""), cfg, 48, vocab);
  cfg.use_prior = false;
  auto plain = init_state(std::nullopt, cfg, 48, vocab);
  EXPECT_EQ(with_empty.ids, plain.ids);
  EXPECT_EQ(with_empty.initial_len, plain.initial_len);
  EXPECT_FALSE(with_empty.prior_used);
}

TEST(Step, TauZeroFixesEverythingInOneStep) {
  Vocab vocab;
  auto truth = vocab.encode("hello");
  auto model = oracle_model(vocab, truth, {0.1f, 0.2f, 0.0f, 0.3f});
  SchedulerConfig cfg = base_config();
  cfg.tau = 0.0;
  cfg.use_pruning = false;
  auto trace = run(init_state(prior_of(vocab, "hallo"), cfg, 48, vocab), model, cfg, vocab);
  EXPECT_EQ(trace.steps.size(), 1u);
  EXPECT_EQ(trace.total_fixed(), trace.initial_len);
  check_trace(trace);
}

TEST(Step, UnattainableTauFixesOnePerStep) {
  Vocab vocab;
  auto truth = vocab.encode("abcd");
  auto model = oracle_model(vocab, truth, {3.0f, 2.0f, 2.0f, 1.0f, 0.5f, 4.0f, 1.0f});
  SchedulerConfig cfg = base_config();
  cfg.tau = 1.01;
  cfg.use_pruning = false;
  auto trace = run(init_state(prior_of(vocab, "abcd"), cfg, 48, vocab), model, cfg, vocab);
  EXPECT_EQ(static_cast<int>(trace.steps.size()), trace.initial_len);
  for (const auto& s : trace.steps) EXPECT_EQ(s.fixed, 1);
  EXPECT_EQ(trace.transcript, "abcd");
  check_trace(trace);
}

TEST(Step, UnattainableTauWithPruningCountsPrunedUndecided) {
  Vocab vocab;
  auto model = oracle_model(vocab, vocab.encode("abcd"), {3.0f, 2.0f, 2.0f, 1.0f, 9.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f});
  SchedulerConfig cfg = base_config();
  cfg.tau = 1.01;
  auto trace = run(init_state(std::nullopt, cfg, 48, vocab), model, cfg, vocab);
  int undecided_pruned = 0;
  for (const auto& s : trace.steps) {
    EXPECT_EQ(s.selected, 1);
    undecided_pruned += s.pruned - (s.selected - s.fixed);
  }
  EXPECT_EQ(static_cast<int>(trace.steps.size()), trace.initial_len - undecided_pruned);
  EXPECT_EQ(trace.steps.size(), 5u);  // the pad at 4 goes first and takes 5..11 with it
  EXPECT_EQ(trace.transcript, "abcd");
  check_trace(trace);
}

TEST(Step, TopGammaTiesPreferLowestIndex) {
  Vocab vocab;
  const int classes = vocab.output_size();
  StubModel model(classes, [&](int, std::span<const int>) { return peaked(classes, 0, 1.0f); });
  SchedulerConfig cfg = base_config();
  cfg.tau = 2.0;
  cfg.gamma = 2;
  cfg.use_pruning = false;
  cfg.use_cache = false;
  auto s = init_state(std::nullopt, cfg, 48, vocab);
  step(s, model, cfg, vocab);
  EXPECT_EQ(s.status[0], PosStatus::kFixed);
  EXPECT_EQ(s.status[1], PosStatus::kFixed);
  for (int i = 2; i < 12; ++i) EXPECT_EQ(s.status[i], PosStatus::kMasked);
}

TEST(Step, NoMaskedPositionThrows) {
  Vocab vocab;
  auto model = oracle_model(vocab, vocab.encode("ab"), {});
  SchedulerConfig cfg = base_config();
  cfg.tau = 0.0;
  auto s = init_state(std::nullopt, cfg, 48, vocab);
  step(s, model, cfg, vocab);
  EXPECT_THROW(step(s, model, cfg, vocab), std::logic_error);
}

TEST(Step, UndecidedPriorTokensAreRemasked) {
  Vocab vocab;
  auto model = oracle_model(vocab, vocab.encode("abc"), {9.0f, 0.1f, 9.0f});
  SchedulerConfig cfg = base_config();
  cfg.use_pruning = false;
  auto s = init_state(prior_of(vocab, "xyz"), cfg, 48, vocab);
  step(s, model, cfg, vocab);
  EXPECT_EQ(s.status[1], PosStatus::kMasked);
  EXPECT_EQ(s.ids[1], vocab.mask());
  EXPECT_EQ(s.ids[0], vocab.id_of('a'));
}

TEST(Step, CacheModesFollowStepIndex) {
  Vocab vocab;
  auto model = oracle_model(vocab, vocab.encode("abc"), {9.0f, 0.1f, 0.2f});
  SchedulerConfig cfg = base_config();
  cfg.use_pruning = false;
  run(init_state(prior_of(vocab, "abc"), cfg, 48, vocab), model, cfg, vocab);
  ASSERT_GE(model.modes.size(), 2u);
  EXPECT_EQ(model.modes[0], CacheMode::kBuildPrefix);
  for (std::size_t i = 1; i < model.modes.size(); ++i) EXPECT_EQ(model.modes[i], CacheMode::kUsePrefix);
  cfg.use_cache = false;
  auto plain = oracle_model(vocab, vocab.encode("abc"), {9.0f, 0.1f});
  run(init_state(prior_of(vocab, "abc"), cfg, 48, vocab), plain, cfg, vocab);
  for (auto m : plain.modes) EXPECT_EQ(m, CacheMode::kNone);
}

TEST(Run, OracleModelDecodesInOneStep) {
  Vocab vocab;
  auto truth = vocab.encode("the cat");
  for (double tau : {0.0, 0.5, 0.9, 1.0}) {
    auto model = oracle_model(vocab, truth, {});
    SchedulerConfig cfg = base_config();
    cfg.tau = tau;
    auto trace = run(init_state(prior_of(vocab, "teh ca"), cfg, 48, vocab), model, cfg, vocab);
    EXPECT_EQ(trace.transcript, "the cat") << tau;
    EXPECT_EQ(trace.steps.size(), 1u) << tau;
    check_trace(trace);
  }
}

TEST(Run, PruningShrinksLiveRegion) {
  Vocab vocab;
  auto model = oracle_model(vocab, vocab.encode("abc"), {9.0f, 0.5f, 9.0f, 0.5f, 9.0f, 0.5f, 0.5f, 0.5f});
  SchedulerConfig cfg = base_config();
  cfg.use_prior = false;
  auto trace = run(init_state(std::nullopt, cfg, 48, vocab), model, cfg, vocab);
  EXPECT_EQ(model.lengths[0], 12);
  // Position 3 predicts pad weakly and stays live until it is decided.
  EXPECT_EQ(model.lengths[1], 4);
  EXPECT_EQ(trace.total_pruned(), 9);
  EXPECT_EQ(trace.transcript, "abc");
  check_trace(trace);
}

TEST(Run, PruningKeepsNonPadTokensOfStubFixture) {
  // 3 tokens + 5 pads; pad confidences vary so pruning triggers mid-run, and
  // the stub's predictions for real tokens depend on the live ids.
  Vocab vocab;
  const int classes = vocab.output_size();
  const std::vector<int> truth = vocab.encode("xyz");
  auto fn = [&](int pos, std::span<const int> ids) {
    if (pos >= 3) return peaked(classes, vocab.pad(), pos == 4 ? 9.0f : 0.8f);
    int decided = 0;
    for (int id : ids)
      if (id != vocab.mask()) ++decided;
    return peaked(classes, truth[pos], 0.5f + decided + pos);
  };
  SchedulerConfig cfg = base_config();
  cfg.fixed_len = 8;
  cfg.use_prior = false;
  StubModel pruned(classes, fn), full(classes, fn);
  auto a = run(init_state(std::nullopt, cfg, 48, vocab), pruned, cfg, vocab);
  cfg.use_pruning = false;
  auto b = run(init_state(std::nullopt, cfg, 48, vocab), full, cfg, vocab);
  EXPECT_EQ(a.transcript, "xyz");
  EXPECT_EQ(a.transcript, b.transcript);
  EXPECT_GT(a.total_pruned(), 0);
  EXPECT_LT(a.total_nfe(), b.total_nfe());
  check_trace(a);
  check_trace(b);
}

TEST(Run, MaxStepsAbortsWithPartialOutput) {
  Vocab vocab;
  auto model = oracle_model(vocab, vocab.encode("abcdef"), {});
  SchedulerConfig cfg = base_config();
  cfg.tau = 1.01;
  cfg.use_pruning = false;
  cfg.max_steps = 3;
  auto trace = run(init_state(std::nullopt, cfg, 48, vocab), model, cfg, vocab);
  EXPECT_TRUE(trace.aborted);
  EXPECT_EQ(trace.steps.size(), 3u);
}

TEST(Vanilla, OnePositionPerStepAndFixedNfe) {
  Vocab vocab;
  auto inner = oracle_model(vocab, vocab.encode("ab cd"), {1.0f, 2.0f, 3.0f});
  CountingModel model(inner);
  SchedulerConfig cfg;
  cfg.fixed_len = 8;
  auto trace = vanilla_decode(model, cfg, vocab);
  EXPECT_EQ(trace.steps.size(), 8u);
  EXPECT_EQ(trace.total_nfe(), 8);
  EXPECT_EQ(model.calls(), 8);
  for (const auto& s : trace.steps) EXPECT_EQ(s.fixed, 1);
  EXPECT_EQ(trace.transcript, "ab cd");
  for (auto m : inner.modes) EXPECT_EQ(m, CacheMode::kNone);
  check_trace(trace);
}

TEST(Vanilla, FewerStepsFixSeveralPerStep) {
  Vocab vocab;
  auto inner = oracle_model(vocab, vocab.encode("ab"), {});
  SchedulerConfig cfg;
  cfg.fixed_len = 10;
  cfg.vanilla_steps = 4;
  auto trace = vanilla_decode(inner, cfg, vocab);
  std::vector<int> per;
  for (const auto& s : trace.steps) per.push_back(s.fixed);
  EXPECT_EQ(per, (std::vector<int>{3, 3, 2, 2}));
}

TEST(CountingModel, CountsEqualTraceNfe) {
  Vocab vocab;
  auto inner = oracle_model(vocab, vocab.encode("abcdefg"), {0.5f, 0.6f, 0.7f, 0.1f, 0.2f});
  CountingModel model(inner);
  SchedulerConfig cfg = base_config();
  auto trace = run(init_state(prior_of(vocab, "abcdefg"), cfg, 48, vocab), model, cfg, vocab);
  EXPECT_EQ(trace.total_nfe(), model.calls());
}

TEST(Config, Validation) {
  SchedulerConfig cfg;
  cfg.gamma = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.vanilla_steps = 200;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
