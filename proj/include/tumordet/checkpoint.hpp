#pragma once

#include "tumordet/config.hpp"
#include "tumordet/parameters.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace tumordet {

class Detector;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorRecord {
  std::string name;
  Shape shape;
};

// File layout: 8-byte magic "TDCKPT01", little-endian u64 manifest length,
// the JSON manifest, then every weight as little-endian float64 in manifest
// order. The manifest carries the run config text, its hash, the training
// iteration and an FNV-1a digest of the payload.
struct Checkpoint {
  long iteration = 0;
  std::string config_text;
  std::string config_hash;
  std::vector<TensorRecord> tensors;
  std::vector<Eigen::VectorXd> values;

  RunConfig config() const { return RunConfig::from_text(config_text); }
};

Checkpoint capture_checkpoint(const Detector& model, long iteration);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const Detector& model, long iteration, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies weights into `model` after checking config hash and topology.
void restore_checkpoint(Detector& model, const Checkpoint& ckpt);

}  // namespace tumordet
