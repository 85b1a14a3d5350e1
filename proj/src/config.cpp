#include "mdasr/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <type_traits>

namespace mdasr {

namespace {

using nlohmann::json;

struct Field {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename V>
V checked(const json& v, const std::string& key) {
  bool ok = false;
  if constexpr (std::is_same_v<V, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_same_v<V, std::uint64_t>) {
    ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  } else if constexpr (std::is_integral_v<V>) {
    ok = v.is_number_integer();
  } else if constexpr (std::is_floating_point_v<V>) {
    ok = v.is_number();
  } else if constexpr (std::is_same_v<V, std::string>) {
    ok = v.is_string();
  } else {
    ok = v.is_array();
    if (ok)
      for (const auto& x : v) ok = ok && x.is_number();
  }
  if (!ok) throw ConfigError("config key '" + key + "' has the wrong type (" + v.type_name() + ")");
  return v.get<V>();
}

template <typename F>
Field field(const std::string& key, F access) {
  return {key,
          [access](const RunConfig& c) { return json(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, const json& v) {
            using V = std::decay_t<decltype(access(c))>;
            access(c) = checked<V>(v, key);
          }};
}

#define MDASR_FIELD(key, expr) field(key, [](RunConfig& c) -> auto& { return c.expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MDASR_FIELD("seed", seed),
      MDASR_FIELD("corpus.n_train", corpus.n_train),
      MDASR_FIELD("corpus.n_dev", corpus.n_dev),
      MDASR_FIELD("corpus.n_test", corpus.n_test),
      MDASR_FIELD("corpus.noise_sigma", corpus.noise_sigma),
      MDASR_FIELD("corpus.d_acoustic", corpus.d_acoustic),
      MDASR_FIELD("corpus.frame_rate_hz", corpus.frame_rate_hz),
      MDASR_FIELD("corpus.min_len", corpus.min_len),
      MDASR_FIELD("corpus.max_len", corpus.max_len),
      MDASR_FIELD("corpus.min_emit", corpus.min_emit),
      MDASR_FIELD("corpus.max_emit", corpus.max_emit),
      MDASR_FIELD("encoder.d_enc", encoder.d_enc),
      MDASR_FIELD("encoder.freeze_encoder", encoder.freeze_encoder),
      MDASR_FIELD("denoiser.layers", denoiser.layers),
      MDASR_FIELD("denoiser.heads", denoiser.heads),
      MDASR_FIELD("denoiser.d_model", denoiser.d_model),
      MDASR_FIELD("denoiser.mlp_hidden", denoiser.mlp_hidden),
      MDASR_FIELD("denoiser.max_answer_len", denoiser.max_answer_len),
      MDASR_FIELD("denoiser.max_acoustic_len", denoiser.max_acoustic_len),
      MDASR_FIELD("denoiser.prompt_region", denoiser.prompt_region),
      MDASR_FIELD("denoiser.causal", denoiser.causal),
      MDASR_FIELD("denoiser.alpha", denoiser.alpha),
      MDASR_FIELD("scheduler.tau", scheduler.tau),
      MDASR_FIELD("scheduler.gamma", scheduler.gamma),
      MDASR_FIELD("scheduler.max_steps", scheduler.max_steps),
      MDASR_FIELD("scheduler.use_prior", scheduler.use_prior),
      MDASR_FIELD("scheduler.use_pruning", scheduler.use_pruning),
      MDASR_FIELD("scheduler.use_cache", scheduler.use_cache),
      MDASR_FIELD("scheduler.fixed_len", scheduler.fixed_len),
      MDASR_FIELD("scheduler.vanilla_steps", scheduler.vanilla_steps),
      MDASR_FIELD("scheduler.margin_frac", scheduler.margin_frac),
      MDASR_FIELD("scheduler.margin_min", scheduler.margin_min),
      MDASR_FIELD("train.epochs", train.epochs),
      MDASR_FIELD("train.batch_size", train.batch_size),
      MDASR_FIELD("train.lr_peak", train.lr_peak),
      MDASR_FIELD("train.lr_final_frac", train.lr_final_frac),
      MDASR_FIELD("train.warmup_steps", train.warmup_steps),
      MDASR_FIELD("train.weight_decay", train.weight_decay),
      MDASR_FIELD("train.grad_clip", train.grad_clip),
      MDASR_FIELD("train.loss_normalization", train.loss_normalization),
      MDASR_FIELD("train.t_weighting", train.t_weighting),
      MDASR_FIELD("train.random_width", train.random_width),
      MDASR_FIELD("train.prior_regime_prob", train.prior_regime_prob),
      MDASR_FIELD("train.prior_corrupt_max", train.prior_corrupt_max),
      MDASR_FIELD("train.dev_eval_utts", train.dev_eval_utts),
      MDASR_FIELD("train.ctc_epochs", train.ctc_epochs),
      MDASR_FIELD("train.ctc_lr", train.ctc_lr),
      MDASR_FIELD("train.ar_epochs", train.ar_epochs),
      MDASR_FIELD("bench.sweep_taus", bench.sweep_taus),
      MDASR_FIELD("bench.split", bench.split),
      MDASR_FIELD("bench.max_utts", bench.max_utts),
      MDASR_FIELD("bench.workers", bench.workers),
      MDASR_FIELD("paths.data_dir", paths.data_dir),
      MDASR_FIELD("paths.checkpoint_dir", paths.checkpoint_dir),
      MDASR_FIELD("paths.run_root", paths.run_root),
  };
  return table;
}

#undef MDASR_FIELD

}  // namespace

RunConfig::RunConfig() {
  // Answer positions are learned up to max_answer_len, so the vanilla
  // baseline uses that width.
  scheduler.fixed_len = denoiser.max_answer_len;
  resolve();
}

void RunConfig::resolve() {
  corpus.seed = seed;
  encoder.d_acoustic = corpus.d_acoustic;
  encoder.d_model = denoiser.d_model;
}

void RunConfig::validate() const {
  try {
    corpus.validate();
    denoiser.validate();
    scheduler.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (encoder.d_enc < 1) throw ConfigError("encoder: d_enc must be positive");
  if (scheduler.fixed_len > denoiser.max_answer_len)
    throw ConfigError("scheduler.fixed_len exceeds denoiser.max_answer_len");
  if (corpus.max_len > denoiser.max_answer_len)
    throw ConfigError("corpus.max_len exceeds denoiser.max_answer_len");
  if (adapted_length(corpus.max_len * corpus.max_emit) > denoiser.max_acoustic_len)
    throw ConfigError("denoiser.max_acoustic_len is too small for the longest utterance");
  if (train.epochs < 0 || train.ctc_epochs < 0 || train.ar_epochs < 0) throw ConfigError("train: negative epoch count");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(train.lr_peak > 0) || !(train.ctc_lr > 0)) throw ConfigError("train: learning rates must be positive");
  if (train.warmup_steps < 0) throw ConfigError("train.warmup_steps must be >= 0");
  if (train.loss_normalization != "answer_width" && train.loss_normalization != "masked_count")
    throw ConfigError("train.loss_normalization must be 'answer_width' or 'masked_count'");
  if (train.t_weighting != "uniform" && train.t_weighting != "inverse_t")
    throw ConfigError("train.t_weighting must be 'uniform' or 'inverse_t'");
  if (train.prior_regime_prob < 0 || train.prior_regime_prob > 1) throw ConfigError("train.prior_regime_prob must lie in [0, 1]");
  if (train.prior_corrupt_max < 0 || train.prior_corrupt_max > 1) throw ConfigError("train.prior_corrupt_max must lie in [0, 1]");
  if (bench.split != "dev" && bench.split != "test" && bench.split != "train")
    throw ConfigError("bench.split must be train, dev or test");
  if (bench.workers < 1) throw ConfigError("bench.workers must be >= 1");
  if (bench.max_utts < 0) throw ConfigError("bench.max_utts must be >= 0");
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.encoder = encoder;
  m.encoder.d_acoustic = corpus.d_acoustic;
  m.encoder.d_model = denoiser.d_model;
  m.denoiser = denoiser;
  m.seed = seed;
  return m;
}

json to_flat_json(const RunConfig& cfg) {
  json out = json::object();
  for (const auto& f : fields()) out[f.key] = f.get(cfg);
  return out;
}

RunConfig from_flat_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object of \"section.key\": value pairs");
  RunConfig cfg;
  const bool fixed_len_given = doc.contains("scheduler.fixed_len");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const Field* match = nullptr;
    for (const auto& f : fields())
      if (f.key == it.key()) match = &f;
    if (!match) throw ConfigError("unknown config key '" + it.key() + "'");
    match->set(cfg, it.value());
  }
  if (!fixed_len_given) cfg.scheduler.fixed_len = cfg.denoiser.max_answer_len;
  cfg.resolve();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  RunConfig cfg;
  try {
    cfg = from_flat_json(doc);
  } catch (const ConfigError& e) {
    throw ConfigError((path.empty() ? std::string("defaults") : path) + ": " + e.what());
  }
  if (const char* env = std::getenv("MDASR_SEED")) {
    char* end = nullptr;
    const unsigned long long s = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw ConfigError("MDASR_SEED is not an unsigned integer: '" + std::string(env) + "'");
    cfg.seed = s;
    cfg.resolve();
  }
  return cfg;
}

std::string config_hash(const RunConfig& cfg, const std::vector<std::string>& prefixes,
                        const std::vector<std::string>& exclude) {
  const json flat = to_flat_json(cfg);
  json picked = json::object();
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    bool keep = prefixes.empty();
    for (const auto& p : prefixes) keep = keep || it.key().rfind(p, 0) == 0;
    for (const auto& p : exclude) keep = keep && it.key().rfind(p, 0) != 0;
    if (keep) picked[it.key()] = it.value();
  }
  const std::string canon = picked.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string training_hash(const RunConfig& cfg) {
  return config_hash(cfg, {"seed", "corpus.", "encoder.", "denoiser.", "train."}, {"train.ctc_", "train.ar_"});
}

std::string ctc_hash(const RunConfig& cfg) {
  return config_hash(cfg, {"seed", "corpus.", "encoder.", "denoiser.", "train."}, {"train.ar_"});
}

}  // namespace mdasr
