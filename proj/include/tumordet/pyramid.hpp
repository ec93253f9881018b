#pragma once

#include "tumordet/parameters.hpp"

#include <array>
#include <vector>

namespace tumordet {

inline constexpr int kMinLevel = 2;
inline constexpr int kMaxLevel = 5;
inline constexpr int kLevelCount = kMaxLevel - kMinLevel + 1;

inline double level_stride(int level) { return static_cast<double>(1 << level); }

enum class PyramidKind { P, S };

// Feature maps indexed by pyramid level 2..5; level i has stride 2^i.
struct FeaturePyramid {
  PyramidKind kind = PyramidKind::P;
  std::array<Var, kLevelCount> levels;

  const Var& level(int i) const;
  Var& level(int i);
  bool complete() const;
};

// Backbone outputs C2..C5.
using StageFeatures = std::array<Var, kLevelCount>;

struct BackboneConfig {
  std::array<Index, 4> widths{32, 64, 128, 256};
  Index blocks_per_stage = 2;
  Index image_side = 256;
};

// Plain four-stage conv stack with strides 4, 8, 16, 32. Stage one applies
// two stride-2 convolutions; later stages open with one stride-2 conv.
class Backbone {
 public:
  Backbone(const BackboneConfig& config, ParameterStore& store, Rng& rng);

  // image is [1,H,W] with H, W divisible by 32.
  StageFeatures extract_features(Tape& tape, const Var& image) const;

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  std::array<std::vector<ConvUnit>, 4> stages_;
};

// Top-down pyramid: lateral 1x1 projections merged with the nearest-neighbour
// upsampled coarser level, then a 3x3 smoothing conv per level.
class TopDownPyramid {
 public:
  TopDownPyramid(const std::array<Index, 4>& stage_widths, Index channels, ParameterStore& store, Rng& rng);

  FeaturePyramid build_fpn(Tape& tape, const StageFeatures& c) const;

  // Test hook: drops the upsampled contribution so each level sees only its lateral.
  void set_top_down(bool enabled) { top_down_ = enabled; }

  const ConvUnit& lateral(int level) const { return lateral_[static_cast<std::size_t>(level - kMinLevel)]; }
  const ConvUnit& smoothing(int level) const { return smooth_[static_cast<std::size_t>(level - kMinLevel)]; }

 private:
  std::array<ConvUnit, kLevelCount> lateral_;
  std::array<ConvUnit, kLevelCount> smooth_;
  bool top_down_ = true;
};

// Bottom-up augmented path: S2 = P2; S(i+1) = conv3x3(downconv3x3_s2(S(i)) + P(i+1)).
class AugmentedPath {
 public:
  AugmentedPath(Index channels, bool relu, ParameterStore& store, Rng& rng);

  FeaturePyramid augment_pyramid(Tape& tape, const FeaturePyramid& p) const;

  // Index 0 produces S3 from S2.
  const ConvUnit& down(int step) const { return down_[static_cast<std::size_t>(step)]; }
  const ConvUnit& fuse(int step) const { return fuse_[static_cast<std::size_t>(step)]; }

 private:
  std::array<ConvUnit, 3> down_;
  std::array<ConvUnit, 3> fuse_;
};

}  // namespace tumordet
