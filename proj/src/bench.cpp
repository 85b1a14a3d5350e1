#include "mdasr/bench.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "mdasr/metrics.hpp"
#include "mdasr/recognizer.hpp"

namespace mdasr {

const AsrModel<float>& ModelSet::require(const SystemSpec& system) const {
  const auto it = models.find(system.model);
  if (it == models.end() || it->second == nullptr)
    throw MissingModelError("system '" + system.name + "' needs the '" + system.model + "' checkpoint");
  return *it->second;
}

const SystemRun& EvalReport::find(const std::string& system) const {
  for (const auto& r : runs)
    if (r.system.name == system) return r;
  throw std::out_of_range("no report row for system '" + system + "'");
}

namespace {

void fill_from_trace(UttResult& out, const ScheduleTrace& trace, int counted_calls) {
  check_trace(trace);
  if (counted_calls != trace.total_nfe())
    throw std::logic_error("utterance " + out.id + ": trace reports " + std::to_string(trace.total_nfe()) +
                           " NFE but the model was called " + std::to_string(counted_calls) + " times");
  out.hypothesis = trace.transcript;
  out.steps = static_cast<int>(trace.steps.size());
  out.nfe = trace.total_nfe();
  out.initial_len = trace.initial_len;
  out.prior_used = trace.prior_used;
  out.aborted = trace.aborted;
  out.step1_fixed = trace.steps.empty() ? 0 : trace.steps.front().fixed_chars;
  for (const auto& s : trace.steps) {
    out.fixed_per_step.push_back(s.fixed);
    out.pruned_per_step.push_back(s.pruned);
  }
}

}  // namespace

UttResult recognize(const SystemSpec& system, const AsrModel<float>& model, const SyntheticUtterance& utt) {
  UttResult out;
  out.id = utt.id;
  out.reference = utt.transcript;
  out.duration_s = utt.duration_s;
  const auto t0 = std::chrono::steady_clock::now();
  const EncodedUtterance enc = encode_utterance(model, utt);
  switch (system.kind) {
    case SystemKind::kCtcPrior: {
      out.hypothesis = model.vocab().decode(ctc_prior(model, enc.encoded).tokens);
      break;
    }
    case SystemKind::kAr: {
      const ArResult r = ar_greedy_decode(model, enc.acoustic, model.config().denoiser.max_answer_len);
      out.hypothesis = r.transcript;
      out.steps = out.nfe = r.nfe;
      out.initial_len = static_cast<int>(r.emitted.size());
      break;
    }
    case SystemKind::kVanilla:
    case SystemKind::kAdaptive: {
      DenoiserLogits logits(model.denoiser(), enc.acoustic);
      CountingModel counter(logits);
      ScheduleTrace trace;
      if (system.kind == SystemKind::kVanilla) {
        trace = vanilla_decode(counter, system.scheduler, model.vocab());
      } else {
        std::optional<PriorHypothesis> prior;
        if (system.scheduler.use_prior) prior = ctc_prior(model, enc.encoded);
        const DecodeState state =
            init_state(prior, system.scheduler, model.config().denoiser.max_answer_len, model.vocab());
        trace = run(state, counter, system.scheduler, model.vocab());
      }
      trace.id = utt.id;
      fill_from_trace(out, trace, counter.calls());
      break;
    }
  }
  out.wall_ns =
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

SystemRun run_system(const SystemSpec& system, const ModelSet& models, const std::vector<SyntheticUtterance>& utts,
                     int workers) {
  const AsrModel<float>& model = models.require(system);
  if (system.kind == SystemKind::kAr && !model.causal())
    throw MissingModelError("system '" + system.name + "' needs a causal (ar) checkpoint");
  if (system.kind != SystemKind::kAr && model.causal())
    throw MissingModelError("system '" + system.name + "' needs a diffusion checkpoint, got a causal one");
  SystemRun run;
  run.system = system;
  run.utts.resize(utts.size());
  const int n = static_cast<int>(utts.size());
  if (workers > 1) {
    std::string error;
#pragma omp parallel for schedule(dynamic) num_threads(workers)
    for (int i = 0; i < n; ++i) {
      try {
        run.utts[i] = recognize(system, model, utts[i]);
      } catch (const std::exception& e) {
#pragma omp critical
        if (error.empty()) error = e.what();
      }
    }
    if (!error.empty()) throw std::runtime_error(error);
  } else {
    for (int i = 0; i < n; ++i) run.utts[i] = recognize(system, model, utts[i]);
  }

  std::vector<std::string> hyps, refs;
  double nfe = 0, steps = 0, wall = 0, dur = 0;
  for (const auto& u : run.utts) {
    hyps.push_back(u.hypothesis);
    refs.push_back(u.reference);
    nfe += u.nfe;
    steps += u.steps;
    wall += u.wall_ns * 1e-9;
    dur += u.duration_s;
  }
  run.row.system = system.name;
  run.row.n_utts = n;
  if (n > 0) {
    run.row.wer = corpus_wer(hyps, refs).pooled_percent;
    run.row.mean_nfe = nfe / n;
    run.row.mean_steps = steps / n;
    run.row.rtf_analog = dur > 0 ? wall / dur : 0.0;
  }
  return run;
}

EvalReport evaluate(const std::vector<SystemSpec>& systems, const ModelSet& models,
                    const std::vector<SyntheticUtterance>& utts, const RunConfig& cfg, int workers) {
  for (const auto& s : systems) models.require(s);
  EvalReport report;
  report.config_hash = config_hash(cfg);
  report.timing_single_threaded = workers <= 1;
  for (const auto& s : systems) report.runs.push_back(run_system(s, models, utts, workers));
  return report;
}

std::vector<SystemSpec> bench_systems(const RunConfig& cfg) {
  SystemSpec adaptive{"adaptive", SystemKind::kAdaptive, cfg.scheduler, kDiffusionModel};
  return {{"ctc-prior-only", SystemKind::kCtcPrior, cfg.scheduler, kDiffusionModel},
          {"vanilla-diffusion", SystemKind::kVanilla, cfg.scheduler, kDiffusionModel},
          adaptive,
          {"ar-baseline", SystemKind::kAr, cfg.scheduler, kArModel}};
}

std::vector<SystemSpec> sweep_systems(const RunConfig& cfg, const std::vector<double>& taus) {
  std::vector<SystemSpec> out;
  for (double tau : taus) {
    SystemSpec s{"", SystemKind::kAdaptive, cfg.scheduler, kDiffusionModel};
    s.scheduler.tau = tau;
    char name[32];
    std::snprintf(name, sizeof name, "tau=%g", tau);
    s.name = name;
    out.push_back(s);
  }
  return out;
}

std::vector<SystemSpec> ablation_systems(const RunConfig& cfg) {
  const SchedulerConfig full = cfg.scheduler;
  SchedulerConfig no_prior = full, no_prune = full, conf = full;
  no_prior.use_prior = false;
  no_prune.use_pruning = false;
  conf.use_prior = conf.use_pruning = conf.use_cache = false;
  return {{"full", SystemKind::kAdaptive, full, kDiffusionModel},
          {"w/o prior", SystemKind::kAdaptive, no_prior, kDiffusionModel},
          {"w/o pruning", SystemKind::kAdaptive, no_prune, kDiffusionModel},
          {"w/o prompt-region", SystemKind::kAdaptive, full, kNoPromptModel},
          {"vanilla", SystemKind::kVanilla, full, kDiffusionModel},
          {"vanilla+confidence", SystemKind::kAdaptive, conf, kDiffusionModel}};
}

std::string csv_row(const ReportRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.6g,%.4f,%d", r.wer, r.mean_nfe, r.rtf_analog, r.mean_steps, r.n_utts);
  // Names are quoted only when they need it.
  std::string name = r.system;
  if (name.find_first_of(",\"") != std::string::npos) {
    std::string q = "\"";
    for (char c : name) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    name = q + "\"";
  }
  return name + "," + buf;
}

void write_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "# config_hash=" << report.config_hash
      << " timing=" << (report.timing_single_threaded ? "single-threaded" : "parallel") << "\n";
  out << kCsvHeader << "\n";
  for (const auto& r : report.runs) out << csv_row(r.row) << "\n";
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

nlohmann::json scheduler_json(const SchedulerConfig& c) {
  return {{"tau", c.tau},           {"gamma", c.gamma},         {"max_steps", c.max_steps},
          {"use_prior", c.use_prior}, {"use_pruning", c.use_pruning}, {"use_cache", c.use_cache},
          {"fixed_len", c.fixed_len}, {"vanilla_steps", c.vanilla_steps}, {"margin_frac", c.margin_frac},
          {"margin_min", c.margin_min}};
}

namespace {

const char* kind_name(SystemKind k) {
  switch (k) {
    case SystemKind::kCtcPrior: return "ctc-prior";
    case SystemKind::kVanilla: return "vanilla";
    case SystemKind::kAdaptive: return "adaptive";
    case SystemKind::kAr: return "ar";
  }
  return "?";
}

}  // namespace

void write_trace(const std::string& path, const SystemRun& run, const nlohmann::json& header_extra) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  nlohmann::json header = {{"type", "header"},
                           {"system", run.system.name},
                           {"kind", kind_name(run.system.kind)},
                           {"model", run.system.model},
                           {"scheduler", scheduler_json(run.system.scheduler)}};
  for (auto it = header_extra.begin(); it != header_extra.end(); ++it) header[it.key()] = it.value();
  out << header.dump() << "\n";
  for (const auto& u : run.utts) {
    nlohmann::json rec = {{"id", u.id},
                          {"steps", u.steps},
                          {"nfe", u.nfe},
                          {"initial_len", u.initial_len},
                          {"prior_used", u.prior_used},
                          {"aborted", u.aborted},
                          {"fixed_per_step", u.fixed_per_step},
                          {"pruned_per_step", u.pruned_per_step},
                          {"wall_ns", u.wall_ns},
                          {"transcript", u.hypothesis},
                          {"reference", u.reference}};
    out << rec.dump() << "\n";
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace mdasr
