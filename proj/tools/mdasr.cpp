#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mdasr/bench.hpp"
#include "mdasr/pipeline.hpp"
#include "mdasr/recognizer.hpp"

namespace fs = std::filesystem;
using namespace mdasr;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// runs/<UTC timestamp>-seed<seed>, suffixed when taken.
std::string make_run_dir(const RunConfig& cfg, const std::string& command) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  const std::string base = cfg.paths.run_root + "/" + stamp + "-seed" + std::to_string(cfg.seed);
  std::string dir = base;
  for (int k = 2; fs::exists(dir); ++k) dir = base + "-" + std::to_string(k);
  fs::create_directories(dir);
  nlohmann::json doc = {{"command", command}, {"config_hash", config_hash(cfg)}, {"config", to_flat_json(cfg)}};
  std::ofstream(dir + "/config.json") << doc.dump(2) << "\n";
  return dir;
}

std::vector<SyntheticUtterance> pick_split(const Corpus& c, const std::string& split, int max_utts) {
  const auto& v = split == "train" ? c.train : split == "dev" ? c.dev : c.test;
  if (max_utts <= 0 || max_utts >= static_cast<int>(v.size())) return v;
  return {v.begin(), v.begin() + max_utts};
}

std::string measured(double v, const char* fmt) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void print_epoch(const EpochLog& l) {
  std::fprintf(stderr, "[%s] epoch %d  steps %lld  lr %.2e  train %.4f  dev_loss %s  dev_wer %s  skipped %d  cpu %.1fs\n",
               l.phase.c_str(), l.epoch, static_cast<long long>(l.optimizer_steps), l.lr, l.train_loss,
               measured(l.dev_loss, "%.4f").c_str(), measured(l.dev_wer, "%.2f%%").c_str(), l.skipped, l.cpu_seconds);
}

ModelSet load_models(const RunConfig& cfg, const std::vector<SystemSpec>& systems, std::vector<LoadedModel>& keep) {
  ModelSet set;
  for (const auto& s : systems) {
    if (set.models.count(s.model)) continue;
    const ModelVariant v = s.model == kArModel         ? ModelVariant::kAr
                           : s.model == kNoPromptModel ? ModelVariant::kDiffusionNoPrompt
                                                       : ModelVariant::kDiffusion;
    const std::string path = checkpoint_path(cfg, v);
    if (!fs::exists(path))
      throw MissingModelError("system '" + s.name + "' needs checkpoint '" + path + "' (run train --which " +
                              (v == ModelVariant::kAr ? "ar" : v == ModelVariant::kDiffusionNoPrompt ? "diffusion --no-prompt" : "diffusion") + ")");
    keep.push_back(load_checkpoint(path));
    const CheckpointInfo& info = keep.back().info;
    const int want = v == ModelVariant::kAr ? cfg.train.ar_epochs : cfg.train.epochs;
    if (info.epochs_done < want)
      throw MissingModelError("system '" + s.name + "': checkpoint '" + path + "' is only trained for " +
                              std::to_string(info.epochs_done) + " of " + std::to_string(want) + " epochs");
    const bool needs_ctc = s.kind == SystemKind::kCtcPrior || (s.kind == SystemKind::kAdaptive && s.scheduler.use_prior);
    if (needs_ctc && !info.ctc_trained())
      throw MissingModelError("system '" + s.name + "' needs a trained CTC head in '" + path + "' (run train --which ctc)");
    set.models[s.model] = keep.back().model.get();
  }
  return set;
}

void emit_report(const EvalReport& report, const RunConfig& cfg, const std::string& dir, const std::string& name) {
  write_csv(dir + "/" + name + ".csv", report);
  fs::create_directories(dir + "/traces");
  for (const auto& run : report.runs) {
    std::string file = run.system.name;
    for (char& c : file)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.' && c != '=') c = '_';
    write_trace(dir + "/traces/" + file + ".jsonl", run, {{"config_hash", config_hash(cfg)}});
  }
  std::cout << kCsvHeader << "\n";
  for (const auto& run : report.runs) std::cout << csv_row(run.row) << "\n";
  std::cerr << "artifacts: " << dir << "\n";
}

std::string category(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
  if (dynamic_cast<const UsageError*>(&e)) return "usage_error";
  if (dynamic_cast<const DatasetError*>(&e)) return "dataset_error";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint_error";
  if (dynamic_cast<const MissingModelError*>(&e)) return "missing_checkpoint";
  if (dynamic_cast<const TrainingDiverged*>(&e)) return "training_diverged";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric_error";
  return "runtime_error";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-diffusion speech recognition on synthetic data"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "flat JSON config (defaults when omitted)");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  std::string out_dir;
  gen->add_option("--out", out_dir, "output directory (default paths.data_dir)");

  auto* train = app.add_subcommand("train", "train a model");
  std::string which = "diffusion";
  bool no_prompt = false;
  train->add_option("--which", which, "diffusion | ctc | ar")->check(CLI::IsMember({"diffusion", "ctc", "ar"}));
  train->add_flag("--no-prompt", no_prompt, "diffusion model without the prompt region");

  auto* decode = app.add_subcommand("decode", "decode a split or one utterance");
  std::string ckpt, split = "test", utt_id, trace_path;
  double tau = -1;
  int gamma = 0, workers = 1, max_utts = 0;
  bool no_prior = false, no_prune = false, no_cache = false, vanilla = false;
  decode->add_option("--checkpoint", ckpt, "checkpoint file (default: the config's diffusion checkpoint)");
  decode->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));
  decode->add_option("--utt", utt_id, "single utterance id");
  decode->add_option("--max-utts", max_utts);
  decode->add_option("--tau", tau);
  decode->add_option("--gamma", gamma);
  decode->add_flag("--no-prior", no_prior);
  decode->add_flag("--no-prune", no_prune);
  decode->add_flag("--no-cache", no_cache);
  decode->add_flag("--vanilla", vanilla);
  decode->add_option("--trace", trace_path, "write a trace JSONL");
  decode->add_option("--workers", workers)->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "compare ctc-prior, vanilla, adaptive and ar systems");
  auto* sweep = app.add_subcommand("sweep", "adaptive decoding across confidence thresholds");
  auto* ablate = app.add_subcommand("ablate", "ablation table");
  std::vector<double> taus;
  sweep->add_option("--taus", taus, "thresholds (default bench.sweep_taus)");
  int eval_workers = 0, eval_max = -1;
  std::string eval_split;
  for (auto* sub : {bench, sweep, ablate}) {
    sub->add_option("--workers", eval_workers, "utterance-parallel accuracy mode")->check(CLI::PositiveNumber);
    sub->add_option("--max-utts", eval_max);
    sub->add_option("--split", eval_split)->check(CLI::IsMember({"train", "dev", "test"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage_error: " << e.what() << "\n";
    return 2;
  }

  try {
    RunConfig cfg = load_config(config_path);
    const std::string data_dir = cfg.paths.data_dir;

    if (gen->parsed()) {
      const std::string dir = out_dir.empty() ? data_dir : out_dir;
      generate_dataset(cfg, dir);
      std::cerr << "wrote " << dir << "/{train,dev,test}.jsonl (corpus hash " << corpus_hash(cfg) << ")\n";
      return 0;
    }

    if (train->parsed()) {
      const Corpus corpus = load_dataset(cfg, data_dir);
      const std::string dir = make_run_dir(cfg, "train " + which + (no_prompt ? " --no-prompt" : ""));
      TrainRequest req;
      req.on_epoch = print_epoch;
      req.metrics_path = dir + "/metrics.jsonl";
      ModelVariant v;
      if (which == "ctc") {
        v = no_prompt ? ModelVariant::kDiffusionNoPrompt : ModelVariant::kDiffusion;
        const std::string path = checkpoint_path(cfg, v);
        if (!fs::exists(path)) throw CheckpointError("no diffusion checkpoint at '" + path + "' (run train --which diffusion first)");
        if (read_checkpoint_info(path).epochs_done < cfg.train.epochs)
          throw CheckpointError("diffusion checkpoint '" + path + "' is incomplete (run train --which diffusion first)");
      } else {
        v = parse_variant(which, no_prompt);
        req.train_ctc = false;
      }
      const LoadedModel lm = obtain_model(cfg, v, corpus, req);
      std::cerr << "checkpoint: " << checkpoint_path(cfg, v) << "  (cpu " << lm.info.train_cpu_seconds << "s";
      if (lm.info.ctc_trained()) std::cerr << ", ctc cpu " << lm.info.ctc_cpu_seconds << "s";
      std::cerr << ")\nmetrics: " << req.metrics_path << "\n";
      return 0;
    }

    if (decode->parsed()) {
      const std::string path = ckpt.empty() ? checkpoint_path(cfg, ModelVariant::kDiffusion) : ckpt;
      LoadedModel lm = load_checkpoint(path);
      const Corpus corpus = load_dataset(cfg, data_dir);
      std::vector<SyntheticUtterance> utts;
      if (!utt_id.empty()) {
        for (const auto* s : {&corpus.train, &corpus.dev, &corpus.test})
          for (const auto& u : *s)
            if (u.id == utt_id) utts.push_back(u);
        if (utts.empty()) throw DatasetError("no utterance with id '" + utt_id + "'");
      } else {
        utts = pick_split(corpus, split, max_utts);
      }
      SystemSpec sys;
      sys.scheduler = cfg.scheduler;
      if (tau >= 0) sys.scheduler.tau = tau;
      if (gamma > 0) sys.scheduler.gamma = gamma;
      if (no_prior) sys.scheduler.use_prior = false;
      if (no_prune) sys.scheduler.use_pruning = false;
      if (no_cache) sys.scheduler.use_cache = false;
      sys.scheduler.validate();
      const bool ar = lm.model->causal();
      if (ar && (vanilla || no_prior || no_prune || no_cache || tau >= 0 || gamma > 0))
        throw UsageError("scheduler flags do not apply to a causal (ar) checkpoint");
      sys.kind = ar ? SystemKind::kAr : vanilla ? SystemKind::kVanilla : SystemKind::kAdaptive;
      sys.model = ar ? kArModel : kDiffusionModel;
      sys.name = ar ? "ar" : vanilla ? "vanilla" : "adaptive";
      if (sys.kind == SystemKind::kAdaptive && sys.scheduler.use_prior && !lm.info.ctc_trained())
        throw CheckpointError("'" + path + "' has no trained CTC head; pass --no-prior or run train --which ctc");
      ModelSet set;
      set.models[sys.model] = lm.model.get();
      const SystemRun run = run_system(sys, set, utts, workers);
      for (const auto& u : run.utts) std::cout << u.id << "\t" << u.hypothesis << "\n";
      std::cerr << kCsvHeader << "\n" << csv_row(run.row) << "\n";
      if (!trace_path.empty()) {
        std::string argv_line;
        for (int i = 1; i < argc; ++i) argv_line += (i > 1 ? " " : "") + std::string(argv[i]);
        write_trace(trace_path, run,
                    {{"config_hash", config_hash(cfg)}, {"checkpoint", path}, {"flags", argv_line},
                     {"timing", workers > 1 ? "parallel" : "single-threaded"}});
      }
      return 0;
    }

    // bench / sweep / ablate
    if (eval_workers > 0) cfg.bench.workers = eval_workers;
    if (eval_max >= 0) cfg.bench.max_utts = eval_max;
    if (!eval_split.empty()) cfg.bench.split = eval_split;
    if (!taus.empty()) cfg.bench.sweep_taus = taus;
    cfg.validate();
    std::vector<SystemSpec> systems;
    std::string name;
    if (bench->parsed()) {
      systems = bench_systems(cfg);
      name = "bench";
    } else if (sweep->parsed()) {
      systems = sweep_systems(cfg, cfg.bench.sweep_taus);
      name = "sweep";
    } else {
      systems = ablation_systems(cfg);
      name = "ablate";
    }
    std::vector<LoadedModel> keep;
    const ModelSet models = load_models(cfg, systems, keep);
    const Corpus corpus = load_dataset(cfg, data_dir);
    const auto utts = pick_split(corpus, cfg.bench.split, cfg.bench.max_utts);
    const std::string dir = make_run_dir(cfg, name);
    const EvalReport report = evaluate(systems, models, utts, cfg, cfg.bench.workers);
    emit_report(report, cfg, dir, name);
    return 0;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "error: " << category(e) << ": " << msg << "\n";
    return 1;
  }
}
