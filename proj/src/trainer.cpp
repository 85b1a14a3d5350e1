#include "mdasr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <numeric>

#include "mdasr/metrics.hpp"
#include "mdasr/recognizer.hpp"

namespace mdasr {

namespace {

constexpr std::uint64_t kStreamDiffusion = 101;
constexpr std::uint64_t kStreamAr = 102;
constexpr std::uint64_t kStreamCtc = 103;
constexpr std::uint64_t kStreamDev = 104;

double cpu_now() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::vector<int> padded(std::vector<int> ids, int width, int pad) {
  ids.resize(width, pad);
  return ids;
}

// Clips the global gradient norm over trainable parameters.
void clip_gradients(ParamStore<float>& store, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0.0;
  for (const auto& e : store.entries())
    if (e.trainable)
      for (float g : e.param->grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingDiverged("gradient norm is not finite");
  if (norm <= max_norm) return;
  const float s = static_cast<float>(max_norm / norm);
  for (auto& e : store.entries())
    if (e.trainable)
      for (float& g : e.param->grad) g *= s;
}

struct Sample {
  Var<float> loss;  // null when skipped
  bool skipped = false;
};

// One training utterance of the diffusion objective, normalized per utterance.
Sample diffusion_sample(const AsrModel<float>& model, const RunConfig& cfg, const std::vector<int>& x,
                        const Var<float>& acoustic, std::mt19937_64& rng) {
  const Vocab& vocab = model.vocab();
  const int max_w = cfg.denoiser.max_answer_len;
  const int n = static_cast<int>(x.size());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (u01(rng) < cfg.train.prior_regime_prob) {
    // Input shaped like a prior-initialized first step: a corrupted
    // hypothesis followed by [M] slack, every position predicted.
    const double rate = u01(rng) * cfg.train.prior_corrupt_max;
    std::vector<int> noisy = corrupt_tokens(x, rate, vocab.num_chars(), rng);
    const int m = static_cast<int>(noisy.size());
    int width = std::clamp(m + length_margin(m, cfg.scheduler), 1, max_w);
    width = std::max(width, n);
    noisy.resize(std::min(m, width));
    noisy.resize(width, vocab.mask());
    const auto targets = padded(x, width, vocab.pad());
    return {scale(prior_correction_loss(model.denoiser(), noisy, targets, acoustic), 1.0f / width), false};
  }
  int width = max_w;
  if (cfg.train.random_width) width = std::uniform_int_distribution<int>(n, max_w)(rng);
  const auto x0 = padded(x, width, vocab.pad());
  auto d = diffusion_loss(model.denoiser(), std::span<const int>(x0), acoustic, rng, cfg.denoiser.alpha, vocab.mask());
  if (d.skipped) return {nullptr, true};
  const double norm = cfg.train.loss_normalization == "masked_count" ? d.n_masked : width;
  // The objective carries a 1/t factor; uniform weighting cancels it.
  const double w = cfg.train.t_weighting == "uniform" ? d.draw.t : 1.0;
  return {scale(d.loss, static_cast<float>(w / norm)), false};
}

Sample ar_sample(const AsrModel<float>& model, const std::vector<int>& x, const Var<float>& acoustic) {
  const float norm = 1.0f / static_cast<float>(x.size() + 1);
  return {scale(next_token_loss(model.denoiser(), std::span<const int>(x), acoustic, model.vocab()), norm), false};
}

void configure_trainable(AsrModel<float>& model, const RunConfig& cfg, bool ctc_phase) {
  ParamStore<float>& p = model.params();
  p.set_trainable("", !ctc_phase);
  p.set_trainable("ctc.", ctc_phase);
  if (ctc_phase) return;
  if (cfg.encoder.freeze_encoder) p.set_trainable("enc.", false);
  if (!cfg.denoiser.prompt_region) p.set_trainable("dec.prompt_pos", false);
}

std::vector<SyntheticUtterance> head(const std::vector<SyntheticUtterance>& v, int n) {
  return {v.begin(), v.begin() + std::min<std::size_t>(v.size(), static_cast<std::size_t>(std::max(n, 0)))};
}

double dev_wer(const AsrModel<float>& model, const RunConfig& cfg, const std::vector<SyntheticUtterance>& dev) {
  if (dev.empty()) return 0.0;
  std::vector<std::string> hyps, refs;
  for (const auto& u : dev) {
    const EncodedUtterance enc = encode_utterance(model, u);
    if (model.causal())
      hyps.push_back(ar_greedy_decode(model, enc.acoustic, cfg.denoiser.max_answer_len).transcript);
    else
      hyps.push_back(vanilla_decode(model, enc, cfg.scheduler).transcript);
    refs.push_back(u.transcript);
  }
  return corpus_wer(hyps, refs).pooled_percent;
}

}  // namespace

nlohmann::json to_json(const EpochLog& log) {
  return {{"phase", log.phase},         {"epoch", log.epoch},     {"optimizer_steps", log.optimizer_steps},
          {"lr", log.lr},               {"train_loss", log.train_loss}, {"dev_loss", log.dev_loss},
          {"dev_wer", log.dev_wer},     {"skipped", log.skipped}, {"cpu_seconds", log.cpu_seconds}};
}

double lr_at(std::int64_t step, std::int64_t total_steps, int warmup_steps, double peak, double final_frac) {
  if (warmup_steps > 0 && step < warmup_steps) return peak * static_cast<double>(step + 1) / warmup_steps;
  const double span = std::max<std::int64_t>(1, total_steps - warmup_steps);
  const double progress = std::clamp(static_cast<double>(step - warmup_steps) / span, 0.0, 1.0);
  const double floor = peak * final_frac;
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

std::vector<int> corrupt_tokens(std::span<const int> ids, double rate, int num_chars, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> other(1, num_chars - 1);
  std::uniform_int_distribution<int> any(0, num_chars - 1);
  std::vector<int> out;
  for (int id : ids) {
    const double u = u01(rng);
    if (u < rate / 3) continue;
    if (u < 2 * rate / 3) {
      out.push_back((id + other(rng)) % num_chars);
    } else if (u < rate) {
      out.push_back(id);
      out.push_back(any(rng));
    } else {
      out.push_back(id);
    }
  }
  return out;
}

double dev_loss(const AsrModel<float>& model, const RunConfig& cfg, const std::vector<SyntheticUtterance>& dev) {
  if (dev.empty()) return 0.0;
  NoGradGuard guard;
  std::mt19937_64 rng = derived_rng(cfg.seed, kStreamDev, 0);
  const Vocab& vocab = model.vocab();
  double total = 0.0;
  for (const auto& u : dev) {
    const EncodedUtterance enc = encode_utterance(model, u);
    const auto x = vocab.encode(u.transcript);
    if (model.causal()) {
      total += ar_sample(model, x, enc.acoustic).loss->value.data[0];
      continue;
    }
    const int width = cfg.denoiser.max_answer_len;
    const auto x0 = padded(x, width, vocab.pad());
    auto d = diffusion_loss(model.denoiser(), std::span<const int>(x0), enc.acoustic, rng, cfg.denoiser.alpha,
                            vocab.mask());
    if (!d.skipped) total += d.loss->value.data[0] / width;
  }
  return total / dev.size();
}

void train_denoiser(AsrModel<float>& model, CheckpointInfo& info, const Corpus& corpus, const TrainHooks& hooks) {
  const RunConfig& cfg = info.config;
  const bool ar = model.causal();
  if (ar != (info.kind == "ar")) throw std::logic_error("train_denoiser: checkpoint kind does not match the model");
  const TrainConfig& tc = cfg.train;
  const int epochs = ar ? tc.ar_epochs : tc.epochs;
  const std::string phase = ar ? "ar" : "diffusion";
  if (corpus.train.empty()) throw std::invalid_argument("train_denoiser: empty training split");
  configure_trainable(model, cfg, false);
  const Vocab& vocab = model.vocab();
  const auto dev = head(corpus.dev, tc.dev_eval_utts);
  const int n = static_cast<int>(corpus.train.size());
  const std::int64_t batches = (n + tc.batch_size - 1) / tc.batch_size;
  const std::int64_t total_steps = batches * epochs;
  AdamConfig adam;
  adam.weight_decay = tc.weight_decay;

  if (info.epochs_done == 0 && hooks.on_epoch) {
    const double t0 = cpu_now();
    EpochLog log{phase, 0, model.params().step_count()};
    log.dev_loss = dev_loss(model, cfg, dev);
    log.cpu_seconds = cpu_now() - t0;
    info.train_cpu_seconds += log.cpu_seconds;
    hooks.on_epoch(log);
  }

  for (int epoch = info.epochs_done; epoch < epochs; ++epoch) {
    const double t0 = cpu_now();
    std::mt19937_64 rng = derived_rng(cfg.seed, ar ? kStreamAr : kStreamDiffusion, epoch);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log{phase, epoch + 1};
    double loss_sum = 0.0;
    int loss_count = 0;
    for (std::int64_t b = 0; b < batches; ++b) {
      const int begin = static_cast<int>(b * tc.batch_size);
      const int end = std::min(n, begin + tc.batch_size);
      model.params().zero_grad();
      int used = 0;
      for (int k = begin; k < end; ++k) {
        const SyntheticUtterance& u = corpus.train[order[k]];
        try {
          const Var<float> acoustic = model.acoustic_features(model.encoder().encode(model.frames_input(u)));
          const auto x = vocab.encode(u.transcript);
          Sample s = ar ? ar_sample(model, x, acoustic) : diffusion_sample(model, cfg, x, acoustic, rng);
          if (s.skipped) {
            ++log.skipped;
            continue;
          }
          const float l = s.loss->value.data[0];
          loss_sum += l;
          ++loss_count;
          ++used;
          backward(scale(s.loss, 1.0f / static_cast<float>(end - begin)));
        } catch (const NumericError& e) {
          throw TrainingDiverged(phase + " training diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                                 std::to_string(model.params().step_count()) + ", utterance " + u.id + ": " +
                                 e.what());
        }
      }
      if (used == 0) continue;
      clip_gradients(model.params(), tc.grad_clip);
      log.lr = lr_at(model.params().step_count(), total_steps, tc.warmup_steps, tc.lr_peak, tc.lr_final_frac);
      model.params().adam_step(log.lr, adam);
    }
    log.optimizer_steps = model.params().step_count();
    log.train_loss = loss_count ? loss_sum / loss_count : 0.0;
    log.dev_loss = dev_loss(model, cfg, dev);
    log.dev_wer = dev_wer(model, cfg, dev);
    if (!std::isfinite(log.train_loss) || !std::isfinite(log.dev_loss))
      throw TrainingDiverged(phase + " training diverged at epoch " + std::to_string(epoch + 1) + ": loss is not finite");
    log.cpu_seconds = cpu_now() - t0;
    info.train_cpu_seconds += log.cpu_seconds;
    info.epochs_done = epoch + 1;
    if (hooks.on_epoch) hooks.on_epoch(log);
    if (hooks.on_checkpoint) hooks.on_checkpoint(model, info);
  }
}

double train_ctc(AsrModel<float>& model, CheckpointInfo& info, const Corpus& corpus, const TrainHooks& hooks) {
  const RunConfig& cfg = info.config;
  const TrainConfig& tc = cfg.train;
  const Vocab& vocab = model.vocab();
  configure_trainable(model, cfg, true);
  const int blank = vocab.ctc_blank_class();

  struct Item {
    Var<float> encoded;
    std::vector<int> target;
  };
  std::vector<Item> items;
  int infeasible = 0;
  const double t_start = cpu_now();
  {
    NoGradGuard guard;
    for (const auto& u : corpus.train) {
      Var<float> enc = model.encoder().encode(model.frames_input(u));
      auto target = vocab.encode(u.transcript);
      const int frames = conv_output_length(enc->value.rows(), 3, 2);
      if (frames < ctc_min_frames(target)) {
        ++infeasible;
        continue;
      }
      items.push_back({enc, std::move(target)});
    }
  }
  auto prior_wer = [&] {
    std::vector<std::string> hyps, refs;
    for (const auto& u : corpus.dev) {
      const EncodedUtterance enc = encode_utterance(model, u);
      hyps.push_back(vocab.decode(ctc_prior(model, enc.encoded).tokens));
      refs.push_back(u.transcript);
    }
    return corpus.dev.empty() ? 0.0 : corpus_wer(hyps, refs).pooled_percent;
  };

  const int n = static_cast<int>(items.size());
  const std::int64_t batches = (n + tc.batch_size - 1) / tc.batch_size;
  const std::int64_t total_steps = batches * tc.ctc_epochs;
  const int warmup = static_cast<int>(std::min<std::int64_t>(tc.warmup_steps, total_steps / 10));
  // Separate optimizer clock so the encoder/denoiser step count is preserved.
  const std::int64_t saved_steps = model.params().step_count();
  model.params().set_step_count(0);
  AdamConfig adam;
  adam.weight_decay = tc.weight_decay;
  double wer = 100.0;
  for (int epoch = 0; epoch < tc.ctc_epochs; ++epoch) {
    const double t0 = epoch == 0 ? t_start : cpu_now();
    std::mt19937_64 rng = derived_rng(cfg.seed, kStreamCtc, epoch);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log{"ctc", epoch + 1};
    log.skipped = infeasible;
    double loss_sum = 0.0;
    for (std::int64_t b = 0; b < batches; ++b) {
      const int begin = static_cast<int>(b * tc.batch_size);
      const int end = std::min(n, begin + tc.batch_size);
      model.params().zero_grad();
      for (int k = begin; k < end; ++k) {
        const Item& it = items[order[k]];
        Var<float> loss = ctc_loss_op(model.ctc().logits(it.encoded), it.target, blank);
        const float norm = 1.0f / static_cast<float>(it.target.size());
        loss_sum += loss->value.data[0] * norm;
        backward(scale(loss, norm / static_cast<float>(end - begin)));
      }
      clip_gradients(model.params(), tc.grad_clip);
      log.lr = lr_at(model.params().step_count(), total_steps, warmup, tc.ctc_lr, tc.lr_final_frac);
      model.params().adam_step(log.lr, adam);
    }
    if (!std::isfinite(loss_sum)) throw TrainingDiverged("ctc training diverged at epoch " + std::to_string(epoch + 1));
    log.optimizer_steps = model.params().step_count();
    log.train_loss = n ? loss_sum / n : 0.0;
    wer = prior_wer();
    log.dev_wer = wer;
    log.cpu_seconds = cpu_now() - t0;
    info.ctc_cpu_seconds += log.cpu_seconds;
    if (hooks.on_epoch) hooks.on_epoch(log);
  }
  model.params().set_step_count(saved_steps);
  configure_trainable(model, cfg, false);
  info.ctc_hash = ctc_hash(cfg);
  if (hooks.on_checkpoint) hooks.on_checkpoint(model, info);
  return wer;
}

}  // namespace mdasr
