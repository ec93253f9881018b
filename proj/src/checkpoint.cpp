#include "tumordet/checkpoint.hpp"

#include "tumordet/dataset.hpp"
#include "tumordet/detector.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>

namespace tumordet {
namespace {

constexpr char kMagic[8] = {'T', 'D', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void append_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

}  // namespace

Checkpoint capture_checkpoint(const Detector& model, long iteration) {
  Checkpoint c;
  c.iteration = iteration;
  c.config_text = model.config().to_text();
  c.config_hash = model.config().hash();
  for (const auto& p : model.parameters()) {
    c.tensors.push_back({p->name, p->value.shape()});
    c.values.push_back(p->value.data());
  }
  return c;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string payload;
  for (const auto& v : ckpt.values)
    payload.append(reinterpret_cast<const char*>(v.data()), static_cast<std::size_t>(v.size()) * sizeof(double));

  nlohmann::json m;
  m["format"] = 1;
  m["iteration"] = ckpt.iteration;
  m["config_hash"] = ckpt.config_hash;
  m["config"] = ckpt.config_text;
  m["payload_bytes"] = payload.size();
  m["payload_fnv1a"] = fnv1a_hex(payload);
  m["tensors"] = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) m["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
  const std::string manifest = m.dump();

  std::string out(kMagic, sizeof kMagic);
  append_u64(out, manifest.size());
  out += manifest;
  out += payload;
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw CheckpointError("not a checkpoint file (bad magic or truncated header)");
  std::uint64_t manifest_len = 0;
  std::memcpy(&manifest_len, bytes.data() + 8, 8);
  if (manifest_len > bytes.size() - 16) throw CheckpointError("checkpoint corrupted: manifest extends past end of file");

  nlohmann::json m;
  try {
    m = nlohmann::json::parse(bytes.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint corrupted: unreadable manifest: ") + e.what());
  }
  Checkpoint c;
  std::size_t payload_bytes = 0;
  std::string digest;
  try {
    c.iteration = m.at("iteration").get<long>();
    c.config_hash = m.at("config_hash").get<std::string>();
    c.config_text = m.at("config").get<std::string>();
    payload_bytes = m.at("payload_bytes").get<std::size_t>();
    digest = m.at("payload_fnv1a").get<std::string>();
    for (const auto& t : m.at("tensors")) c.tensors.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>()});
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint manifest incomplete: ") + e.what());
  }

  const std::size_t offset = 16 + manifest_len;
  if (bytes.size() - offset != payload_bytes)
    throw CheckpointError("checkpoint corrupted: expected " + std::to_string(payload_bytes) + " payload bytes, found " +
                          std::to_string(bytes.size() - offset));
  const std::string payload = bytes.substr(offset);
  if (fnv1a_hex(payload) != digest) throw CheckpointError("checkpoint corrupted: payload digest mismatch");
  if (RunConfig::from_text(c.config_text).hash() != c.config_hash)
    throw CheckpointError("checkpoint corrupted: stored config does not match its hash");

  std::size_t at = 0;
  for (const auto& t : c.tensors) {
    const Index n = element_count(t.shape);
    const std::size_t len = static_cast<std::size_t>(n) * sizeof(double);
    if (at + len > payload.size()) throw CheckpointError("checkpoint corrupted: tensor '" + t.name + "' is truncated");
    Eigen::VectorXd v(n);
    std::memcpy(v.data(), payload.data() + at, len);
    c.values.push_back(std::move(v));
    at += len;
  }
  if (at != payload.size()) throw CheckpointError("checkpoint corrupted: trailing payload bytes");
  return c;
}

void save_checkpoint(const Detector& model, long iteration, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(capture_checkpoint(model, iteration)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
  try {
    return parse_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

void restore_checkpoint(Detector& model, const Checkpoint& ckpt) {
  const std::string expected = model.config().hash();
  if (ckpt.config_hash != expected)
    throw CheckpointError("config hash mismatch: checkpoint " + ckpt.config_hash + ", model " + expected);
  ParameterStore& store = model.parameters();
  if (store.size() != ckpt.tensors.size())
    throw CheckpointError("topology mismatch: checkpoint has " + std::to_string(ckpt.tensors.size()) +
                          " tensors, model has " + std::to_string(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store[i];
    if (p.name != ckpt.tensors[i].name || p.value.shape() != ckpt.tensors[i].shape)
      throw CheckpointError("topology mismatch at tensor " + std::to_string(i) + ": checkpoint '" + ckpt.tensors[i].name +
                            "' " + to_string(ckpt.tensors[i].shape) + ", model '" + p.name + "' " +
                            to_string(p.value.shape()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) store[i].value.data() = ckpt.values[i];
}

}  // namespace tumordet
