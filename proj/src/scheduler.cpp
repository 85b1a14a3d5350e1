#include "mdasr/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mdasr {

void SchedulerConfig::validate() const {
  if (!(tau >= 0.0)) throw std::invalid_argument("scheduler: tau must be >= 0");
  if (gamma < 1) throw std::invalid_argument("scheduler: gamma must be >= 1");
  if (max_steps < 0) throw std::invalid_argument("scheduler: max_steps must be >= 0");
  if (fixed_len < 1) throw std::invalid_argument("scheduler: fixed_len must be >= 1");
  if (vanilla_steps < 0 || vanilla_steps > fixed_len)
    throw std::invalid_argument("scheduler: vanilla_steps must lie in [0, fixed_len]");
  if (margin_frac < 0.0 || margin_min < 0) throw std::invalid_argument("scheduler: negative length margin");
}

int length_margin(int anchor, const SchedulerConfig& cfg) {
  return std::max(cfg.margin_min, static_cast<int>(std::ceil(cfg.margin_frac * anchor - 1e-9)));
}

Tensor<float> DenoiserLogits::denoise(std::span<const int> ids, CacheMode mode) {
  NoGradGuard guard;
  return model_.forward(acoustic_, ids, &cache_, mode)->value;
}

int DecodeState::masked_count() const {
  return static_cast<int>(std::count(status.begin(), status.end(), PosStatus::kMasked));
}

int ScheduleTrace::total_nfe() const {
  int n = 0;
  for (const auto& s : steps) n += s.nfe;
  return n;
}

int ScheduleTrace::total_fixed() const {
  int n = 0;
  for (const auto& s : steps) n += s.fixed;
  return n;
}

int ScheduleTrace::total_pruned() const {
  int n = 0;
  for (const auto& s : steps) n += s.pruned;
  return n;
}

namespace {

DecodeState blank_state(int length, const Vocab& vocab) {
  DecodeState s;
  s.status.assign(length, PosStatus::kMasked);
  s.ids.assign(length, vocab.mask());
  s.confidence.assign(length, 0.0f);
  s.live_len = s.initial_len = length;
  return s;
}

struct RowStats {
  int argmax;
  float conf;
};

RowStats row_stats(std::span<const float> row) {
  const auto it = std::max_element(row.begin(), row.end());
  const float mx = *it;
  double se = 0.0;
  for (float v : row) se += std::exp(static_cast<double>(v - mx));
  return {static_cast<int>(it - row.begin()), static_cast<float>(1.0 / se)};
}

// Candidates ordered by confidence, ties to the lowest position.
void sort_by_confidence(std::vector<int>& positions, const std::vector<RowStats>& stats) {
  std::stable_sort(positions.begin(), positions.end(),
                   [&](int a, int b) { return stats[a].conf > stats[b].conf; });
}

void verify_transition(const DecodeState& before, const DecodeState& after) {
  for (std::size_t i = 0; i < before.status.size(); ++i) {
    if (before.status[i] == PosStatus::kMasked) continue;
    if (after.status[i] != before.status[i] || (before.status[i] == PosStatus::kFixed && after.ids[i] != before.ids[i]))
      throw std::logic_error("scheduler: decided position " + std::to_string(i) + " changed");
  }
  if (after.live_len > before.live_len) throw std::logic_error("scheduler: live length grew");
}

std::int64_t elapsed_ns(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

DecodeState init_state(const std::optional<PriorHypothesis>& prior, const SchedulerConfig& cfg, int max_answer_len,
                       const Vocab& vocab) {
  cfg.validate();
  if (cfg.use_prior && prior && prior->length_anchor > 0) {
    const int anchor = prior->length_anchor;
    const int len = std::clamp(anchor + length_margin(anchor, cfg), 1, max_answer_len);
    DecodeState s = blank_state(len, vocab);
    for (int i = 0; i < std::min(len, anchor); ++i) s.ids[i] = prior->tokens[i];
    s.prior_used = true;
    return s;
  }
  // Missing or empty prior: all-mask initialization.
  return blank_state(cfg.fixed_len, vocab);
}

StepRecord step(DecodeState& state, LogitsModel& model, const SchedulerConfig& cfg, const Vocab& vocab) {
  if (state.masked_count() == 0) throw std::logic_error("scheduler: step called with no masked position");
  const auto t0 = std::chrono::steady_clock::now();
  const DecodeState before = state;
  const int live = state.live_len;
  CacheMode mode = CacheMode::kNone;
  if (cfg.use_cache) mode = state.step == 0 ? CacheMode::kBuildPrefix : CacheMode::kUsePrefix;
  const Tensor<float> logits = model.denoise(std::span<const int>(state.ids.data(), live), mode);
  if (logits.rows() != live) throw DimensionError("scheduler: model returned " + std::to_string(logits.rows()) + " rows for " + std::to_string(live) + " positions");

  StepRecord rec;
  rec.nfe = 1;
  std::vector<RowStats> stats(live);
  std::vector<int> masked;
  double conf_sum = 0.0;
  for (int i = 0; i < live; ++i) {
    stats[i] = row_stats(logits.row(i));
    if (state.status[i] != PosStatus::kMasked) continue;
    masked.push_back(i);
    rec.max_conf = std::max(rec.max_conf, static_cast<double>(stats[i].conf));
    conf_sum += stats[i].conf;
  }
  rec.mean_conf = masked.empty() ? 0.0 : conf_sum / masked.size();

  std::vector<int> chosen;
  for (int i : masked)
    if (stats[i].conf >= cfg.tau) chosen.push_back(i);
  if (chosen.empty()) {
    chosen = masked;
    sort_by_confidence(chosen, stats);
    chosen.resize(std::min<std::size_t>(chosen.size(), cfg.gamma));
  }
  std::vector<bool> fixed_now(live, false);
  for (int i : chosen) {
    state.status[i] = PosStatus::kFixed;
    state.ids[i] = stats[i].argmax;
    state.confidence[i] = stats[i].conf;
    fixed_now[i] = true;
  }
  rec.selected = rec.fixed = static_cast<int>(chosen.size());

  if (cfg.use_pruning) {
    // Smallest decided pad such that every later live position is a decided
    // pad or an undecided position currently predicting pad.
    const int pad = vocab.pad();
    int cut = -1;
    for (int j = live - 1; j >= 0; --j) {
      const bool fixed_pad = state.status[j] == PosStatus::kFixed && state.ids[j] == pad;
      const bool masked_pad = state.status[j] == PosStatus::kMasked && stats[j].argmax == pad;
      if (!fixed_pad && !masked_pad) break;
      if (fixed_pad) cut = j;
    }
    if (cut >= 0) {
      for (int j = cut; j < live; ++j) {
        if (state.status[j] == PosStatus::kMasked || fixed_now[j]) {
          if (fixed_now[j]) --rec.fixed;
          state.status[j] = PosStatus::kPruned;
          state.ids[j] = pad;
          ++rec.pruned;
        }
      }
      state.live_len = cut;
    }
  }

  for (int i : chosen)
    rec.fixed_chars += state.status[i] == PosStatus::kFixed && vocab.is_char(state.ids[i]);
  // Undecided positions are re-masked; prior tokens are only seen once.
  for (int i = 0; i < state.live_len; ++i)
    if (state.status[i] == PosStatus::kMasked) state.ids[i] = vocab.mask();
  ++state.step;
  verify_transition(before, state);
  rec.wall_ns = elapsed_ns(t0);
  return rec;
}

std::string transcript_of(const DecodeState& state, const Vocab& vocab) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < state.ids.size(); ++i)
    if (state.status[i] == PosStatus::kFixed) ids.push_back(state.ids[i]);
  return vocab.decode(ids);
}

namespace {

void finish(ScheduleTrace& trace, const DecodeState& state, const Vocab& vocab) {
  trace.tokens.clear();
  for (std::size_t i = 0; i < state.ids.size(); ++i)
    if (state.status[i] == PosStatus::kFixed) trace.tokens.push_back(state.ids[i]);
  trace.transcript = transcript_of(state, vocab);
}

}  // namespace

ScheduleTrace run(DecodeState state, LogitsModel& model, const SchedulerConfig& cfg, const Vocab& vocab) {
  cfg.validate();
  ScheduleTrace trace;
  trace.initial_len = state.initial_len;
  trace.prior_used = state.prior_used;
  for (auto s : state.status) trace.initial_non_masked += s != PosStatus::kMasked;
  const int limit = cfg.max_steps > 0 ? cfg.max_steps : 2 * std::max(1, state.initial_len);
  while (state.masked_count() > 0) {
    if (state.step >= limit) {
      trace.aborted = true;
      break;
    }
    trace.steps.push_back(step(state, model, cfg, vocab));
  }
  finish(trace, state, vocab);
  return trace;
}

ScheduleTrace vanilla_decode(LogitsModel& model, const SchedulerConfig& cfg, const Vocab& vocab) {
  cfg.validate();
  DecodeState state = blank_state(cfg.fixed_len, vocab);
  const int steps = cfg.vanilla_steps > 0 ? cfg.vanilla_steps : cfg.fixed_len;
  ScheduleTrace trace;
  trace.initial_len = state.initial_len;
  for (int s = 0; s < steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const DecodeState before = state;
    const Tensor<float> logits = model.denoise(state.ids, CacheMode::kNone);
    if (logits.rows() != state.live_len) throw DimensionError("vanilla: model returned the wrong number of rows");
    std::vector<RowStats> stats(state.live_len);
    std::vector<int> masked;
    StepRecord rec;
    rec.nfe = 1;
    double conf_sum = 0.0;
    for (int i = 0; i < state.live_len; ++i) {
      stats[i] = row_stats(logits.row(i));
      if (state.status[i] != PosStatus::kMasked) continue;
      masked.push_back(i);
      rec.max_conf = std::max(rec.max_conf, static_cast<double>(stats[i].conf));
      conf_sum += stats[i].conf;
    }
    rec.mean_conf = masked.empty() ? 0.0 : conf_sum / masked.size();
    const int remaining = static_cast<int>(masked.size());
    const int k = (remaining + (steps - s) - 1) / (steps - s);
    sort_by_confidence(masked, stats);
    for (int j = 0; j < k; ++j) {
      const int i = masked[j];
      state.status[i] = PosStatus::kFixed;
      state.ids[i] = stats[i].argmax;
      state.confidence[i] = stats[i].conf;
      rec.fixed_chars += vocab.is_char(state.ids[i]);
    }
    rec.selected = rec.fixed = k;
    ++state.step;
    verify_transition(before, state);
    rec.wall_ns = elapsed_ns(t0);
    trace.steps.push_back(rec);
  }
  finish(trace, state, vocab);
  return trace;
}

void check_trace(const ScheduleTrace& trace) {
  if (trace.total_nfe() < 1) throw std::logic_error("trace " + trace.id + ": no model evaluation recorded");
  if (trace.aborted) return;
  const int decided = trace.total_fixed() + trace.total_pruned() + trace.initial_non_masked;
  if (decided != trace.initial_len)
    throw std::logic_error("trace " + trace.id + ": fixed + pruned = " + std::to_string(decided) +
                           " but the initial length is " + std::to_string(trace.initial_len));
  for (const auto& s : trace.steps)
    if (s.fixed + s.pruned < 1) throw std::logic_error("trace " + trace.id + ": a step decided nothing");
}

}  // namespace mdasr
