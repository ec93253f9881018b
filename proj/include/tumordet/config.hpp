#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace tumordet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every tunable of the detector, trainer and evaluator. Defaults follow the
// reference setup; desk-scale overrides live in configs/
struct RunConfig {
  // Backbone and pyramids.
  int image_side = 256;
  std::array<int, 4> backbone_widths{32, 64, 128, 256};
  int blocks_per_stage = 2;
  int pyramid_channels = 256;
  bool augmented_relu = true;

  // Anchors: side lengths (area = side^2) and height/width ratios.
  std::vector<double> anchor_sides{16, 32, 64, 128, 256};
  std::vector<double> anchor_ratios{1.0, 1.5, 1.0 / 1.5, 2.0, 0.5};

  // Region proposal network.
  int rpn_batch = 256;
  double rpn_positive_fraction = 0.5;
  double rpn_positive_iou = 0.7;
  double rpn_negative_iou = 0.3;
  int pre_nms_k = 1000;
  double nms_iou = 0.7;
  int post_nms_k = 100;
  int test_post_nms_k = 100;

  // Training-time ROI sampling.
  int roi_samples = 512;
  double roi_positive_fraction = 0.5;
  double roi_positive_iou = 0.5;

  // Level assignment k = clamp(floor(k0 + log2(sqrt(wh) / C)), min, max).
  double level_k0 = 5.0;
  double level_canonical = 224.0;
  int level_min = 3;
  int level_max = 4;
  double enlarge_w = 1.2;
  double enlarge_h = 1.2;
  int pool_size = 14;
  int fused_channels = 512;
  int dc_channels = 256;
  bool dc_on_b = false;

  // Detection heads; box deltas are divided by these before decoding.
  int head_hidden = 256;
  std::array<double, 4> head_delta_weights{10.0, 10.0, 5.0, 5.0};

  // Component switches (ablation).
  bool use_augmented_pyramid = true;
  bool use_feature_fusion = true;
  bool use_dc_module = true;

  // Optimization. Phase lengths are rescaled to `iterations` keeping their ratio.
  int iterations = 6000;
  std::array<double, 3> lr_rates{1e-3, 1e-4, 1e-5};
  std::array<int, 3> lr_phases{30000, 20000, 10000};
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip = 0.0;  // 0 disables global-norm clipping
  std::uint64_t seed = 7;
  bool flip_augmentation = true;
  int log_every = 100;

  // Inference and evaluation.
  double score_threshold = 0.5;
  double det_nms_iou = 0.3;
  int det_max_per_image = 5;
  double det_min_score = 0.0;
  double match_iou = 0.5;

  // Canonical `key = value` text, one line per field, fixed order.
  std::string to_text() const;
  // 64-bit FNV-1a of to_text(), hex encoded.
  std::string hash() const;
  // Applies `key = value` lines over the current values. Unknown keys throw.
  void apply_text(const std::string& text, const std::string& origin = "<config>");
  void set(const std::string& key, const std::string& value);

  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_text(const std::string& text) {
    RunConfig c;
    c.apply_text(text);
    return c;
  }

  // Consistency checks between related fields; throws ConfigError.
  void validate() const;
};

std::string fnv1a_hex(const std::string& bytes);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace tumordet
