#include "mdasr/checkpoint.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "mdasr/ops.hpp"

namespace mdasr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

using nlohmann::json;

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U take(std::istream& in, const std::string& path) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError(path + ": truncated checkpoint");
  return v;
}

void put_blob(std::ostream& out, const std::string& name, const std::vector<int>& shape, const float* data) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
  for (int d : shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(shape_numel(shape) * sizeof(float)));
}

json header_json(const AsrModel<float>& model, const CheckpointInfo& info) {
  json h;
  h["format_version"] = 1;
  h["kind"] = info.kind;
  h["config"] = to_flat_json(info.config);
  h["training_hash"] = info.training_hash;
  h["ctc_hash"] = info.ctc_hash;
  h["vocab"] = {{"chars", model.vocab().chars()}, {"prompt_tokens", model.vocab().prompt_tokens()}};
  h["seed"] = info.config.seed;
  const AdamConfig adam;
  h["eps"] = {{"layer_norm", kLayerNormEps}, {"adam", adam.eps}};
  h["adam"] = {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"weight_decay", info.config.train.weight_decay}};
  h["optimizer_steps"] = model.params().step_count();
  h["epochs_done"] = info.epochs_done;
  h["train_cpu_seconds"] = info.train_cpu_seconds;
  h["ctc_cpu_seconds"] = info.ctc_cpu_seconds;
  h["created_at"] = info.created_at.empty() ? utc_timestamp() : info.created_at;
  return h;
}

struct Header {
  CheckpointInfo info;
  json raw;
};

Header read_header(std::istream& in, const std::string& path) {
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::memcmp(magic, kCheckpointMagic, kMagicLen) != 0)
    throw CheckpointError(path + ": not a checkpoint (bad magic, expected " + kCheckpointMagic + ")");
  const auto len = take<std::uint32_t>(in, path);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw CheckpointError(path + ": truncated checkpoint header");
  Header h;
  try {
    h.raw = json::parse(text);
    if (h.raw.at("format_version").get<int>() != 1)
      throw CheckpointError(path + ": unsupported checkpoint version (expected " + kCheckpointMagic + " format 1)");
    h.info.kind = h.raw.at("kind").get<std::string>();
    h.info.config = from_flat_json(h.raw.at("config"));
    h.info.training_hash = h.raw.at("training_hash").get<std::string>();
    h.info.ctc_hash = h.raw.at("ctc_hash").get<std::string>();
    h.info.epochs_done = h.raw.at("epochs_done").get<int>();
    h.info.train_cpu_seconds = h.raw.at("train_cpu_seconds").get<double>();
    h.info.ctc_cpu_seconds = h.raw.at("ctc_cpu_seconds").get<double>();
    h.info.created_at = h.raw.at("created_at").get<std::string>();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(path + ": malformed checkpoint header: " + e.what());
  }
  return h;
}

}  // namespace

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void save_checkpoint(const std::string& path, const AsrModel<float>& model, const CheckpointInfo& info) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot open '" + tmp + "' for writing");
    out.write(kCheckpointMagic, kMagicLen);
    const std::string header = header_json(model, info).dump();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    const auto& entries = model.params().entries();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(3 * entries.size()));
    for (const auto& e : entries) {
      const auto& shape = e.param->value.shape;
      put_blob(out, e.name, shape, e.param->value.data.data());
      std::vector<float> m = e.m, v = e.v;
      m.resize(e.param->value.size(), 0.0f);
      v.resize(e.param->value.size(), 0.0f);
      put_blob(out, e.name + "#m", shape, m.data());
      put_blob(out, e.name + "#v", shape, v.data());
    }
    if (!out) throw CheckpointError("failed writing '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return read_header(in, path).info;
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  Header h = read_header(in, path);
  const Vocab vocab(h.raw.at("vocab").at("chars").get<std::string>(), h.raw.at("vocab").at("prompt_tokens").get<int>());
  LoadedModel out;
  out.info = h.info;
  out.model = std::make_unique<AsrModel<float>>(h.info.config.model_config(), vocab);
  auto& store = out.model->params();
  store.set_step_count(h.raw.at("optimizer_steps").get<std::int64_t>());

  const auto n_blobs = take<std::uint32_t>(in, path);
  std::size_t seen = 0;
  for (std::uint32_t b = 0; b < n_blobs; ++b) {
    const auto name_len = take<std::uint16_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw CheckpointError(path + ": truncated blob name");
    const auto ndim = take<std::uint8_t>(in, path);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(take<std::uint32_t>(in, path));
    std::vector<float> data(shape_numel(shape));
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float))))
      throw CheckpointError(path + ": truncated data for blob '" + name + "'");

    const auto hash = name.find('#');
    const std::string base = name.substr(0, hash);
    if (!store.contains(base)) throw CheckpointError(path + ": unexpected parameter '" + base + "'");
    auto& e = store.entry(base);
    if (e.param->value.shape != shape)
      throw CheckpointError(path + ": shape " + shape_str(shape) + " for '" + name + "' does not match the model " +
                            shape_str(e.param->value.shape));
    if (hash == std::string::npos) {
      e.param->value.data = std::move(data);
      ++seen;
    } else if (name.substr(hash) == "#m") {
      e.m = std::move(data);
    } else if (name.substr(hash) == "#v") {
      e.v = std::move(data);
    } else {
      throw CheckpointError(path + ": unknown blob suffix in '" + name + "'");
    }
  }
  if (seen != store.entries().size())
    throw CheckpointError(path + ": checkpoint holds " + std::to_string(seen) + " of " +
                          std::to_string(store.entries().size()) + " parameters");
  return out;
}

}  // namespace mdasr
