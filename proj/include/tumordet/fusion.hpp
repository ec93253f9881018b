#pragma once

#include "tumordet/box.hpp"
#include "tumordet/parameters.hpp"
#include "tumordet/pyramid.hpp"

#include <utility>

namespace tumordet {

struct LevelRule {
  double k0 = 5.0;
  double canonical = 224.0;
  int min_level = 3;
  int max_level = 4;
};

struct LevelAssignment {
  int k = 4;
  int k_minus = 3;
  int k_plus = 5;
};

// k = min(max_level, max(floor(k0 + log2(sqrt(w*h) / canonical)), min_level)).
LevelAssignment assign_level(double w, double h, const LevelRule& rule = {});

// Scales width and height about the centre, then clips to the image.
Box enlarge_roi(const Box& b, double scale_w, double scale_h, double image_w, double image_h);

enum class DescriptorOrigin { B, R };

struct FusedDescriptor {
  Var tensor;  // [fused_channels, pool, pool]
  DescriptorOrigin origin = DescriptorOrigin::B;
};

struct ReductionWeights {
  Var weight;  // [out, 3 * channels, 1, 1]
  Var bias;    // [out]
};

// Pools `roi` on S(k-1), S(k), S(k+1) (coordinates divided by each level's
// stride), concatenates the three maps in that order and applies the 1x1
// reduction.
FusedDescriptor fuse(const Box& roi, const FeaturePyramid& s, const LevelAssignment& k,
                     const ReductionWeights& reduce, Index pool, DescriptorOrigin origin);

struct FusionConfig {
  Index channels = 256;
  Index fused_channels = 512;
  Index pool = 14;
  double enlarge_w = 1.2;
  double enlarge_h = 1.2;
  double image_side = 256;
  LevelRule rule;
  // When off, a proposal is pooled on its single assigned level with no
  // enlarged region, as in a plain FPN detector.
  bool multi_level = true;
};

// Owns the two reduction convolutions, one for B-descriptors and one for
// R-descriptors.
class FeatureFusion {
 public:
  FeatureFusion(const FusionConfig& config, ParameterStore& store, Rng& rng);

  // k comes from B's size and is reused for the enlarged region R.
  std::pair<FusedDescriptor, FusedDescriptor> build_descriptors(Tape& tape, const Box& b, const FeaturePyramid& s) const;

  ReductionWeights weights(Tape& tape, DescriptorOrigin origin) const;
  const FusionConfig& config() const { return config_; }

 private:
  FusedDescriptor single_level(Tape& tape, const Box& roi, const FeaturePyramid& s, int level,
                               DescriptorOrigin origin) const;

  FusionConfig config_;
  ConvUnit reduce_b_;
  ConvUnit reduce_r_;
};

}  // namespace tumordet
