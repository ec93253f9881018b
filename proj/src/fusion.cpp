#include "tumordet/fusion.hpp"

#include "tumordet/ops.hpp"

#include <cassert>
#include <cmath>

namespace tumordet {

LevelAssignment assign_level(double w, double h, const LevelRule& rule) {
  const double raw = std::floor(rule.k0 + std::log2(std::sqrt(w * h) / rule.canonical));
  // Clamp in floating point first: log2 of a tiny area is a large negative number.
  const int k = static_cast<int>(std::min<double>(rule.max_level, std::max<double>(raw, rule.min_level)));
  if (k - 1 < kMinLevel || k + 1 > kMaxLevel) throw std::logic_error("assigned level has no neighbouring levels");
  return {k, k - 1, k + 1};
}

Box enlarge_roi(const Box& b, double scale_w, double scale_h, double image_w, double image_h) {
  const Box r = Box::from_center(b.center_x(), b.center_y(), b.width() * scale_w, b.height() * scale_h);
  return clip(r, image_w, image_h);
}

FusedDescriptor fuse(const Box& roi, const FeaturePyramid& s, const LevelAssignment& k,
                     const ReductionWeights& reduce, Index pool, DescriptorOrigin origin) {
  std::array<Var, 3> pooled;
  const std::array<int, 3> levels{k.k_minus, k.k, k.k_plus};
  for (std::size_t i = 0; i < 3; ++i)
    pooled[i] = roi_pool(s.level(levels[i]), roi, 1.0 / level_stride(levels[i]), pool);
  Var stacked = concat_channels(std::span<const Var>(pooled));
  Var reduced = add_bias(conv2d(stacked, reduce.weight, 1, 0), reduce.bias);
  return {reduced, origin};
}

FeatureFusion::FeatureFusion(const FusionConfig& config, ParameterStore& store, Rng& rng) : config_(config) {
  const Index in = config.multi_level ? 3 * config.channels : config.channels;
  reduce_b_ = ConvUnit::create(store, "fusion.reduce_b", in, config.fused_channels, 1, 1, false, rng);
  reduce_r_ = ConvUnit::create(store, "fusion.reduce_r", in, config.fused_channels, 1, 1, false, rng);
}

ReductionWeights FeatureFusion::weights(Tape& tape, DescriptorOrigin origin) const {
  const ConvUnit& u = origin == DescriptorOrigin::B ? reduce_b_ : reduce_r_;
  return {tape.param(*u.weight), tape.param(*u.bias)};
}

FusedDescriptor FeatureFusion::single_level(Tape& tape, const Box& roi, const FeaturePyramid& s, int level,
                                            DescriptorOrigin origin) const {
  const ReductionWeights w = weights(tape, origin);
  Var pooled = roi_pool(s.level(level), roi, 1.0 / level_stride(level), config_.pool);
  return {add_bias(conv2d(pooled, w.weight, 1, 0), w.bias), origin};
}

std::pair<FusedDescriptor, FusedDescriptor> FeatureFusion::build_descriptors(Tape& tape, const Box& b,
                                                                             const FeaturePyramid& s) const {
  const LevelAssignment k = assign_level(b.width(), b.height(), config_.rule);
  if (!config_.multi_level) {
    return {single_level(tape, b, s, k.k, DescriptorOrigin::B), single_level(tape, b, s, k.k, DescriptorOrigin::R)};
  }
  const Box r = enlarge_roi(b, config_.enlarge_w, config_.enlarge_h, config_.image_side, config_.image_side);
  return {fuse(b, s, k, weights(tape, DescriptorOrigin::B), config_.pool, DescriptorOrigin::B),
          fuse(r, s, k, weights(tape, DescriptorOrigin::R), config_.pool, DescriptorOrigin::R)};
}

}  // namespace tumordet
