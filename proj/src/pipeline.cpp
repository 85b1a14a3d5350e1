#include "mdasr/pipeline.hpp"

#include <filesystem>
#include <fstream>

namespace mdasr {

namespace fs = std::filesystem;

std::string corpus_hash(const RunConfig& cfg) { return config_hash(cfg, {"seed", "corpus."}); }

namespace {

nlohmann::json manifest(const RunConfig& cfg) {
  nlohmann::json keys = nlohmann::json::object();
  const auto flat = to_flat_json(cfg);
  for (auto it = flat.begin(); it != flat.end(); ++it)
    if (it.key() == "seed" || it.key().rfind("corpus.", 0) == 0) keys[it.key()] = it.value();
  return {{"corpus_hash", corpus_hash(cfg)}, {"config", keys}};
}

}  // namespace

void generate_dataset(const RunConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  const Corpus corpus = gen_corpus(cfg.corpus, Vocab());
  write_corpus(dir, corpus);
  std::ofstream out(dir + "/manifest.json");
  out << manifest(cfg).dump(2) << "\n";
  if (!out) throw DatasetError("failed writing '" + dir + "/manifest.json'");
}

Corpus load_dataset(const RunConfig& cfg, const std::string& dir) {
  const std::string mpath = dir + "/manifest.json";
  std::ifstream in(mpath);
  if (!in) throw DatasetError("dataset not found: '" + mpath + "' is missing (run gen-data first)");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(mpath + ": " + e.what());
  }
  const std::string want = corpus_hash(cfg);
  if (m.value("corpus_hash", std::string()) != want)
    throw DatasetError("dataset '" + dir + "' was generated with corpus hash " + m.value("corpus_hash", std::string("?")) +
                       ", the config expects " + want + " (rerun gen-data)");
  try {
    return read_corpus(dir);
  } catch (const std::runtime_error& e) {
    throw DatasetError(e.what());
  }
}

Corpus ensure_dataset(const RunConfig& cfg, const std::string& dir) {
  try {
    return load_dataset(cfg, dir);
  } catch (const DatasetError&) {
    generate_dataset(cfg, dir);
    return load_dataset(cfg, dir);
  }
}

ModelVariant parse_variant(const std::string& which, bool no_prompt) {
  if (which == "diffusion") return no_prompt ? ModelVariant::kDiffusionNoPrompt : ModelVariant::kDiffusion;
  if (which == "ar") {
    if (no_prompt) throw ConfigError("--no-prompt applies to the diffusion model only");
    return ModelVariant::kAr;
  }
  throw ConfigError("unknown model '" + which + "' (expected diffusion, ctc or ar)");
}

RunConfig variant_config(const RunConfig& base, ModelVariant v) {
  RunConfig c = base;
  if (v == ModelVariant::kDiffusionNoPrompt) c.denoiser.prompt_region = false;
  if (v == ModelVariant::kAr) c.denoiser.causal = true;
  c.resolve();
  c.validate();
  return c;
}

std::string checkpoint_path(const RunConfig& base, ModelVariant v) {
  const RunConfig c = variant_config(base, v);
  const char* name = v == ModelVariant::kAr ? "ar" : v == ModelVariant::kDiffusion ? "diffusion" : "diffusion-noprompt";
  return base.paths.checkpoint_dir + "/" + name + "-" + training_hash(c) + ".ckpt";
}

LoadedModel obtain_model(const RunConfig& base, ModelVariant v, const Corpus& corpus, const TrainRequest& req) {
  const RunConfig cfg = variant_config(base, v);
  const std::string path = checkpoint_path(base, v);
  const bool ar = v == ModelVariant::kAr;
  const int target_epochs = ar ? cfg.train.ar_epochs : cfg.train.epochs;

  LoadedModel lm;
  if (fs::exists(path)) {
    lm = load_checkpoint(path);
    if (lm.info.training_hash != training_hash(cfg))
      throw CheckpointError("checkpoint '" + path + "' has training hash " + lm.info.training_hash +
                            ", the config expects " + training_hash(cfg) + "; refusing to resume");
  } else {
    lm.model = std::make_unique<AsrModel<float>>(cfg.model_config(), Vocab());
  }
  // Run settings outside the training hash follow the current config.
  lm.info.config = cfg;
  lm.info.kind = ar ? "ar" : "diffusion";
  lm.info.training_hash = training_hash(cfg);
  if (lm.info.created_at.empty()) lm.info.created_at = utc_timestamp();

  const bool need_denoiser = lm.info.epochs_done < target_epochs;
  const bool need_ctc = !ar && req.train_ctc && lm.info.ctc_hash != ctc_hash(cfg);
  if ((need_denoiser || need_ctc) && !req.allow_training)
    throw CheckpointError("checkpoint '" + path + "' is missing or incomplete");
  if (!need_denoiser && !need_ctc) return lm;

  fs::create_directories(fs::path(path).parent_path());
  std::ofstream metrics;
  if (!req.metrics_path.empty()) {
    metrics.open(req.metrics_path, std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open '" + req.metrics_path + "' for writing");
  }
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& log) {
    if (metrics.is_open()) {
      auto j = to_json(log);
      j["config_hash"] = lm.info.training_hash;
      metrics << j.dump() << std::endl;
    }
    if (req.on_epoch) req.on_epoch(log);
  };
  hooks.on_checkpoint = [&](const AsrModel<float>& m, const CheckpointInfo& info) { save_checkpoint(path, m, info); };
  if (need_denoiser) {
    // A new denoiser invalidates any CTC head trained on the old encoder.
    lm.info.ctc_hash.clear();
    train_denoiser(*lm.model, lm.info, corpus, hooks);
  }
  if (!ar && req.train_ctc && lm.info.ctc_hash != ctc_hash(cfg)) {
    lm.info.ctc_cpu_seconds = 0.0;
    train_ctc(*lm.model, lm.info, corpus, hooks);
  }
  return lm;
}

}  // namespace mdasr
