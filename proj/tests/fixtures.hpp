#pragma once

#include "tumordet/config.hpp"
#include "tumordet/dataset.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace tumordet::testing {

// A detector small enough to train for a few steps inside a unit test.
inline RunConfig tiny_config() {
  RunConfig c;
  c.image_side = 128;
  c.backbone_widths = {4, 6, 8, 8};
  c.pyramid_channels = 6;
  c.anchor_sides = {16, 32, 64};
  c.anchor_ratios = {1.0, 2.0, 0.5};
  c.rpn_batch = 32;
  c.pre_nms_k = 200;
  c.post_nms_k = 16;
  c.test_post_nms_k = 8;
  c.roi_samples = 8;
  c.pool_size = 3;
  c.fused_channels = 6;
  c.dc_channels = 3;
  c.head_hidden = 8;
  c.iterations = 10;
  c.lr_rates = {0.01, 0.001, 0.0001};
  c.log_every = 1;
  return c;
}

inline SynthParams tiny_synth() {
  SynthParams p;
  p.side = 128;
  p.diameter_min = 15;
  p.diameter_max = 50;
  p.diameter_mean = 30;
  p.diameter_sd = 8;
  return p;
}

inline LoadedImage tiny_scan(bool tumor, std::uint64_t seed) {
  const SyntheticScan s = generate_scan(tumor, seed, tiny_synth());
  return {"scan" + std::to_string(seed), s.image, s.gts};
}

// Unique scratch directory under the system temp dir, removed on destruction.
struct ScratchDir {
  std::filesystem::path path;
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("tumordet-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
};

}  // namespace tumordet::testing
