#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "mdasr/checkpoint.hpp"
#include "mdasr/pipeline.hpp"
#include "mdasr/recognizer.hpp"
#include "mdasr/trainer.hpp"

using namespace mdasr;
using mdasr::testing::tiny_run_config;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mdasr_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::vector<float> all_params(const AsrModel<float>& m) {
  std::vector<float> out;
  for (const auto& e : m.params().entries()) {
    out.insert(out.end(), e.param->value.data.begin(), e.param->value.data.end());
    out.insert(out.end(), e.m.begin(), e.m.end());
    out.insert(out.end(), e.v.begin(), e.v.end());
  }
  return out;
}

std::vector<float> probe_forward(const AsrModel<float>& m, const SyntheticUtterance& u) {
  const EncodedUtterance enc = encode_utterance(m, u);
  std::vector<int> ids(6, m.vocab().mask());
  ids[1] = 3;
  NoGradGuard guard;
  auto out = m.denoiser().forward(enc.acoustic, ids)->value.data;
  const auto ctc = m.ctc().logits(enc.encoded)->value.data;
  out.insert(out.end(), ctc.begin(), ctc.end());
  return out;
}

CheckpointInfo fresh_info(const RunConfig& cfg, const std::string& kind = "diffusion") {
  CheckpointInfo info;
  info.kind = kind;
  info.config = cfg;
  info.training_hash = training_hash(cfg);
  return info;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value)
      ::setenv("MDASR_SEED", value, 1);
    else
      ::unsetenv("MDASR_SEED");
  }
  ~EnvGuard() { ::unsetenv("MDASR_SEED"); }
};

}  // namespace

// ---- config ----

TEST(Config, DefaultsValidateAndRoundTrip) {
  const RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  const auto flat = to_flat_json(cfg);
  EXPECT_EQ(to_flat_json(from_flat_json(flat)), flat);
  EXPECT_EQ(cfg.scheduler.fixed_len, cfg.denoiser.max_answer_len);
  EXPECT_EQ(flat.at("bench.sweep_taus"), nlohmann::json({0.6, 0.7, 0.8, 0.9, 0.95}));
}

TEST(Config, UnknownKeyRejected) {
  try {
    from_flat_json({{"scheduler.tua", 0.5}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("scheduler.tua"), std::string::npos);
  }
}

TEST(Config, WrongTypeRejected) {
  EXPECT_THROW(from_flat_json({{"scheduler.tau", "high"}}), ConfigError);
  EXPECT_THROW(from_flat_json({{"denoiser.layers", 2.5}}), ConfigError);
  EXPECT_THROW(from_flat_json({{"scheduler.use_cache", 1}}), ConfigError);
  EXPECT_THROW(from_flat_json({{"seed", -3}}), ConfigError);
  EXPECT_THROW(from_flat_json(nlohmann::json::array()), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(from_flat_json({{"scheduler.gamma", 0}}), ConfigError);
  EXPECT_THROW(from_flat_json({{"scheduler.fixed_len", 49}}), ConfigError);
  EXPECT_THROW(from_flat_json({{"train.loss_normalization", "tokens"}}), ConfigError);
  EXPECT_THROW(from_flat_json({{"bench.split", "eval"}}), ConfigError);
}

TEST(Config, FixedLenFollowsMaxAnswerLenUnlessGiven) {
  EXPECT_EQ(from_flat_json({{"denoiser.max_answer_len", 40}}).scheduler.fixed_len, 40);
  EXPECT_EQ(from_flat_json({{"denoiser.max_answer_len", 40}, {"scheduler.fixed_len", 32}}).scheduler.fixed_len, 32);
}

TEST(Config, LoadFileAndSeedOverride) {
  const std::string dir = temp_dir("cfg");
  const std::string path = dir + "/c.json";
  std::ofstream(path) << R"({"seed": 7, "scheduler.tau": 0.8})";
  {
    EnvGuard env(nullptr);
    const RunConfig c = load_config(path);
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.corpus.seed, 7u);
    EXPECT_DOUBLE_EQ(c.scheduler.tau, 0.8);
  }
  {
    EnvGuard env("4242");
    const RunConfig c = load_config(path);
    EXPECT_EQ(c.seed, 4242u);
    EXPECT_EQ(c.corpus.seed, 4242u);
  }
  {
    EnvGuard env("12abc");
    EXPECT_THROW(load_config(path), ConfigError);
  }
  std::ofstream(dir + "/bad.json") << "{\"seed\": ";
  try {
    load_config(dir + "/bad.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json"), std::string::npos);
  }
  EXPECT_THROW(load_config(dir + "/absent.json"), ConfigError);
}

TEST(Config, HashScopes) {
  const RunConfig a;
  RunConfig b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.scheduler.tau = 0.5;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(training_hash(a), training_hash(b));
  b = a;
  b.train.ctc_lr = 1e-2;
  EXPECT_EQ(training_hash(a), training_hash(b));
  EXPECT_NE(ctc_hash(a), ctc_hash(b));
  b = a;
  b.train.ar_epochs = 3;
  EXPECT_EQ(ctc_hash(a), ctc_hash(b));
  b = a;
  b.denoiser.layers = 3;
  EXPECT_NE(training_hash(a), training_hash(b));
}

// ---- checkpoint ----

TEST(Checkpoint, RoundTripIsBitExact) {
  const RunConfig cfg = tiny_run_config();
  const Corpus corpus = gen_corpus(cfg.corpus, Vocab());
  AsrModel<float> model(cfg.model_config(), Vocab());
  CheckpointInfo info = fresh_info(cfg);
  train_denoiser(model, info, corpus);
  info.ctc_hash = "0123456789abcdef";
  const std::string path = temp_dir("ckpt") + "/m.ckpt";
  save_checkpoint(path, model, info);

  const LoadedModel lm = load_checkpoint(path);
  EXPECT_EQ(lm.info.training_hash, info.training_hash);
  EXPECT_EQ(lm.info.ctc_hash, info.ctc_hash);
  EXPECT_EQ(lm.info.epochs_done, 1);
  EXPECT_EQ(to_flat_json(lm.info.config), to_flat_json(cfg));
  EXPECT_EQ(lm.model->params().step_count(), model.params().step_count());
  EXPECT_EQ(all_params(*lm.model), all_params(model));
  for (const auto& u : corpus.dev) EXPECT_EQ(probe_forward(*lm.model, u), probe_forward(model, u));
  EXPECT_EQ(read_checkpoint_info(path).training_hash, info.training_hash);
}

TEST(Checkpoint, CorruptFilesRejected) {
  const RunConfig cfg = tiny_run_config();
  AsrModel<float> model(cfg.model_config(), Vocab());
  const std::string dir = temp_dir("ckpt_bad");
  const std::string good = dir + "/good.ckpt";
  save_checkpoint(good, model, fresh_info(cfg));

  std::ofstream(dir + "/magic.ckpt", std::ios::binary) << "NOTACKPT-garbage";
  try {
    load_checkpoint(dir + "/magic.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("MDASR1"), std::string::npos);
  }

  std::ifstream in(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ofstream(dir + "/trunc.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 100);
  EXPECT_THROW(load_checkpoint(dir + "/trunc.ckpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir + "/absent.ckpt"), CheckpointError);
}

// ---- trainer ----

TEST(Trainer, LearningRateSchedule) {
  EXPECT_DOUBLE_EQ(lr_at(0, 100, 10, 1.0, 0.1), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(9, 100, 10, 1.0, 0.1), 1.0);
  EXPECT_NEAR(lr_at(10, 100, 10, 1.0, 0.1), 1.0, 1e-12);
  EXPECT_NEAR(lr_at(55, 100, 10, 1.0, 0.1), 0.55, 1e-12);
  EXPECT_NEAR(lr_at(100, 100, 10, 1.0, 0.1), 0.1, 1e-12);
  for (int s = 11; s < 100; ++s) EXPECT_LE(lr_at(s, 100, 10, 1.0, 0.1), lr_at(s - 1, 100, 10, 1.0, 0.1));
}

TEST(Trainer, CorruptTokens) {
  std::mt19937_64 rng(5);
  const std::vector<int> ids{0, 1, 2, 3, 4, 5, 6, 7};
  EXPECT_EQ(corrupt_tokens(ids, 0.0, 27, rng), ids);
  int changed = 0;
  for (int k = 0; k < 200; ++k) {
    const auto c = corrupt_tokens(ids, 0.9, 27, rng);
    for (int id : c) EXPECT_TRUE(id >= 0 && id < 27);
    changed += c != ids;
  }
  EXPECT_GT(changed, 190);
}

TEST(Trainer, SmokeEpochProducesLoadableCheckpoint) {
  const RunConfig cfg = tiny_run_config();
  const Corpus corpus = gen_corpus(cfg.corpus, Vocab());
  AsrModel<float> model(cfg.model_config(), Vocab());
  CheckpointInfo info = fresh_info(cfg);
  std::vector<EpochLog> logs;
  const std::string path = temp_dir("smoke") + "/s.ckpt";
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& l) { logs.push_back(l); };
  hooks.on_checkpoint = [&](const AsrModel<float>& m, const CheckpointInfo& i) { save_checkpoint(path, m, i); };
  train_denoiser(model, info, corpus, hooks);
  ASSERT_EQ(logs.size(), 2u);
  EXPECT_EQ(logs[0].epoch, 0);
  EXPECT_EQ(logs[1].epoch, 1);
  EXPECT_EQ(logs[1].optimizer_steps, 3);
  EXPECT_GE(logs[1].dev_wer, 0.0);
  EXPECT_GT(info.train_cpu_seconds, 0.0);
  EXPECT_EQ(load_checkpoint(path).info.epochs_done, 1);
  EXPECT_EQ(to_json(logs[1]).at("phase"), "diffusion");
}

TEST(Trainer, DevLossDropsAfterOneEpoch) {
  RunConfig cfg = tiny_run_config();
  cfg.corpus.n_train = 96;
  cfg.train.batch_size = 8;
  cfg.train.lr_peak = 3e-3;
  cfg.resolve();
  const Corpus corpus = gen_corpus(cfg.corpus, Vocab());
  AsrModel<float> model(cfg.model_config(), Vocab());
  CheckpointInfo info = fresh_info(cfg);
  std::vector<double> dev;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& l) { dev.push_back(l.dev_loss); };
  train_denoiser(model, info, corpus, hooks);
  ASSERT_EQ(dev.size(), 2u);
  EXPECT_LT(dev[1], dev[0]);
}

TEST(Trainer, DeterministicAndResumable) {
  RunConfig cfg = tiny_run_config();
  cfg.train.epochs = 2;
  const Corpus corpus = gen_corpus(cfg.corpus, Vocab());

  AsrModel<float> a(cfg.model_config(), Vocab());
  CheckpointInfo ia = fresh_info(cfg);
  train_denoiser(a, ia, corpus);
  AsrModel<float> b(cfg.model_config(), Vocab());
  CheckpointInfo ib = fresh_info(cfg);
  train_denoiser(b, ib, corpus);
  EXPECT_EQ(all_params(a), all_params(b));

  // Interrupt after the first epoch, reload and finish.
  const std::string path = temp_dir("resume") + "/r.ckpt";
  AsrModel<float> c(cfg.model_config(), Vocab());
  CheckpointInfo ic = fresh_info(cfg);
  TrainHooks stop;
  stop.on_checkpoint = [&](const AsrModel<float>& m, const CheckpointInfo& i) {
    save_checkpoint(path, m, i);
    throw std::runtime_error("interrupted");
  };
  EXPECT_THROW(train_denoiser(c, ic, corpus, stop), std::runtime_error);
  LoadedModel lm = load_checkpoint(path);
  EXPECT_EQ(lm.info.epochs_done, 1);
  train_denoiser(*lm.model, lm.info, corpus);
  EXPECT_EQ(all_params(*lm.model), all_params(a));
  for (const auto& u : corpus.dev) EXPECT_EQ(probe_forward(*lm.model, u), probe_forward(a, u));
}

TEST(Trainer, CtcSmokeAndDeterminism) {
  const RunConfig cfg = tiny_run_config();
  const Corpus corpus = gen_corpus(cfg.corpus, Vocab());
  std::vector<float> first;
  for (int rep = 0; rep < 2; ++rep) {
    AsrModel<float> model(cfg.model_config(), Vocab());
    CheckpointInfo info = fresh_info(cfg);
    const auto before = model.params().get("enc.w1")->value.data;
    std::vector<EpochLog> logs;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochLog& l) { logs.push_back(l); };
    const double wer = train_ctc(model, info, corpus, hooks);
    ASSERT_EQ(logs.size(), 1u);
    EXPECT_EQ(logs[0].phase, "ctc");
    EXPECT_GE(wer, 0.0);
    EXPECT_EQ(info.ctc_hash, ctc_hash(cfg));
    EXPECT_EQ(model.params().get("enc.w1")->value.data, before);
    EXPECT_EQ(model.params().step_count(), 0);
    if (rep == 0)
      first = all_params(model);
    else
      EXPECT_EQ(all_params(model), first);
  }
}

TEST(Trainer, ArSmoke) {
  RunConfig cfg = tiny_run_config();
  cfg.denoiser.causal = true;
  const Corpus corpus = gen_corpus(cfg.corpus, Vocab());
  AsrModel<float> model(cfg.model_config(), Vocab());
  CheckpointInfo info = fresh_info(cfg, "ar");
  std::vector<EpochLog> logs;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& l) { logs.push_back(l); };
  train_denoiser(model, info, corpus, hooks);
  ASSERT_EQ(logs.size(), 2u);
  EXPECT_EQ(logs[1].phase, "ar");
  CheckpointInfo wrong = fresh_info(cfg, "diffusion");
  EXPECT_THROW(train_denoiser(model, wrong, corpus), std::logic_error);
}

// ---- autoregressive decoding ----

TEST(ArDecode, Contract) {
  RunConfig cfg = tiny_run_config();
  cfg.denoiser.causal = true;
  const Corpus corpus = gen_corpus(cfg.corpus, Vocab());
  AsrModel<float> model(cfg.model_config(), Vocab());
  const EncodedUtterance enc = encode_utterance(model, corpus.test[0]);
  const ArResult empty = ar_greedy_decode(model, enc.acoustic, 0);
  EXPECT_TRUE(empty.emitted.empty());
  EXPECT_EQ(empty.nfe, 0);
  EXPECT_EQ(empty.transcript, "");
  for (int max_len : {1, 3, 10, 50}) {
    const ArResult r = ar_greedy_decode(model, enc.acoustic, max_len);
    EXPECT_EQ(r.nfe, static_cast<int>(r.emitted.size()));
    EXPECT_LE(r.nfe, std::min(max_len, cfg.denoiser.max_answer_len));
    EXPECT_GE(r.nfe, 1);
    for (std::size_t i = 0; i + 1 < r.emitted.size(); ++i) EXPECT_NE(r.emitted[i], model.vocab().pad());
  }

  RunConfig dcfg = tiny_run_config();
  AsrModel<float> diffusion(dcfg.model_config(), Vocab());
  EXPECT_THROW(ar_greedy_decode(diffusion, encode_utterance(diffusion, corpus.test[0]).acoustic, 5), std::logic_error);
}

// ---- pipeline ----

TEST(Pipeline, DatasetManifestChecked) {
  RunConfig cfg = tiny_run_config();
  const std::string dir = temp_dir("data");
  EXPECT_THROW(load_dataset(cfg, dir), DatasetError);
  generate_dataset(cfg, dir);
  const Corpus c = load_dataset(cfg, dir);
  EXPECT_EQ(static_cast<int>(c.train.size()), cfg.corpus.n_train);
  RunConfig other = cfg;
  other.corpus.noise_sigma = 0.5;
  try {
    load_dataset(other, dir);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("gen-data"), std::string::npos);
  }
}

TEST(Pipeline, ObtainTrainsOnceThenLoads) {
  RunConfig cfg = tiny_run_config();
  cfg.paths.checkpoint_dir = temp_dir("obtain");
  const Corpus corpus = gen_corpus(cfg.corpus, Vocab());
  TrainRequest no_train;
  no_train.allow_training = false;
  EXPECT_THROW(obtain_model(cfg, ModelVariant::kDiffusion, corpus, no_train), CheckpointError);

  int epochs = 0;
  TrainRequest req;
  req.on_epoch = [&](const EpochLog&) { ++epochs; };
  const LoadedModel a = obtain_model(cfg, ModelVariant::kDiffusion, corpus, req);
  EXPECT_EQ(epochs, 3);  // initial evaluation, one denoiser epoch, one ctc epoch
  EXPECT_TRUE(a.info.ctc_trained());
  const LoadedModel b = obtain_model(cfg, ModelVariant::kDiffusion, corpus, req);
  EXPECT_EQ(epochs, 3);
  EXPECT_EQ(all_params(*a.model), all_params(*b.model));

  // Scheduler settings do not affect the checkpoint.
  RunConfig sched = cfg;
  sched.scheduler.tau = 0.5;
  EXPECT_EQ(checkpoint_path(sched, ModelVariant::kDiffusion), checkpoint_path(cfg, ModelVariant::kDiffusion));
  EXPECT_NE(checkpoint_path(cfg, ModelVariant::kAr), checkpoint_path(cfg, ModelVariant::kDiffusion));
  EXPECT_NE(checkpoint_path(cfg, ModelVariant::kDiffusionNoPrompt), checkpoint_path(cfg, ModelVariant::kDiffusion));
  EXPECT_FALSE(variant_config(cfg, ModelVariant::kDiffusionNoPrompt).denoiser.prompt_region);
  EXPECT_TRUE(variant_config(cfg, ModelVariant::kAr).denoiser.causal);
}

TEST(Pipeline, RefusesMismatchedHash) {
  RunConfig cfg = tiny_run_config();
  cfg.paths.checkpoint_dir = temp_dir("mismatch");
  const Corpus corpus = gen_corpus(cfg.corpus, Vocab());
  AsrModel<float> model(cfg.model_config(), Vocab());
  CheckpointInfo info = fresh_info(cfg);
  info.training_hash = "00000000deadbeef";
  save_checkpoint(checkpoint_path(cfg, ModelVariant::kDiffusion), model, info);
  EXPECT_THROW(obtain_model(cfg, ModelVariant::kDiffusion, corpus, {}), CheckpointError);
}

TEST(Pipeline, ParseVariant) {
  EXPECT_EQ(parse_variant("diffusion", false), ModelVariant::kDiffusion);
  EXPECT_EQ(parse_variant("diffusion", true), ModelVariant::kDiffusionNoPrompt);
  EXPECT_EQ(parse_variant("ar", false), ModelVariant::kAr);
  EXPECT_THROW(parse_variant("ar", true), ConfigError);
  EXPECT_THROW(parse_variant("rnn", false), ConfigError);
}
