#include "tumordet/pyramid.hpp"

#include "tumordet/ops.hpp"

namespace tumordet {

const Var& FeaturePyramid::level(int i) const {
  if (i < kMinLevel || i > kMaxLevel) throw std::out_of_range("pyramid level " + std::to_string(i) + " out of range");
  const Var& v = levels[static_cast<std::size_t>(i - kMinLevel)];
  if (!v.valid()) throw std::invalid_argument("pyramid level " + std::to_string(i) + " is missing");
  return v;
}

Var& FeaturePyramid::level(int i) {
  if (i < kMinLevel || i > kMaxLevel) throw std::out_of_range("pyramid level " + std::to_string(i) + " out of range");
  return levels[static_cast<std::size_t>(i - kMinLevel)];
}

bool FeaturePyramid::complete() const {
  for (const Var& v : levels)
    if (!v.valid()) return false;
  return true;
}

Backbone::Backbone(const BackboneConfig& config, ParameterStore& store, Rng& rng) : config_(config) {
  Index in = 1;
  for (std::size_t s = 0; s < 4; ++s) {
    const Index width = config.widths[s];
    for (Index b = 0; b < config.blocks_per_stage; ++b) {
      const Index stride = (b == 0 || (s == 0 && b == 1)) ? 2 : 1;
      const std::string name = "backbone.stage" + std::to_string(s + 2) + ".conv" + std::to_string(b);
      stages_[s].push_back(ConvUnit::create(store, name, in, width, 3, stride, true, rng));
      in = width;
    }
  }
}

StageFeatures Backbone::extract_features(Tape& tape, const Var& image) const {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 1) throw ShapeError("backbone expects a [1,H,W] image, got " + to_string(s));
  if (s[1] % 32 != 0 || s[2] % 32 != 0)
    throw ShapeError("backbone input sides must be divisible by 32, got " + to_string(s));
  StageFeatures out;
  Var x = image;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    for (const ConvUnit& conv : stages_[stage]) x = conv(tape, x);
    out[stage] = x;
  }
  return out;
}

TopDownPyramid::TopDownPyramid(const std::array<Index, 4>& stage_widths, Index channels, ParameterStore& store,
                               Rng& rng) {
  for (int level = kMinLevel; level <= kMaxLevel; ++level) {
    const auto i = static_cast<std::size_t>(level - kMinLevel);
    const std::string tag = std::to_string(level);
    lateral_[i] = ConvUnit::create(store, "fpn.lateral" + tag, stage_widths[i], channels, 1, 1, false, rng);
    smooth_[i] = ConvUnit::create(store, "fpn.smooth" + tag, channels, channels, 3, 1, false, rng);
  }
}

FeaturePyramid TopDownPyramid::build_fpn(Tape& tape, const StageFeatures& c) const {
  FeaturePyramid p;
  p.kind = PyramidKind::P;
  Var merged;
  for (int level = kMaxLevel; level >= kMinLevel; --level) {
    const auto i = static_cast<std::size_t>(level - kMinLevel);
    Var lat = lateral_[i](tape, c[i]);
    merged = (level == kMaxLevel || !top_down_) ? lat : add(lat, upsample2x(merged));
    p.levels[i] = smooth_[i](tape, merged);
  }
  return p;
}

AugmentedPath::AugmentedPath(Index channels, bool relu, ParameterStore& store, Rng& rng) {
  for (std::size_t step = 0; step < 3; ++step) {
    const std::string tag = std::to_string(step + 3);
    down_[step] = ConvUnit::create(store, "augment.down" + tag, channels, channels, 3, 2, relu, rng);
    fuse_[step] = ConvUnit::create(store, "augment.fuse" + tag, channels, channels, 3, 1, relu, rng);
  }
}

FeaturePyramid AugmentedPath::augment_pyramid(Tape& tape, const FeaturePyramid& p) const {
  if (!p.complete()) throw std::invalid_argument("augment_pyramid needs all levels P2..P5");
  FeaturePyramid s;
  s.kind = PyramidKind::S;
  s.level(kMinLevel) = p.level(kMinLevel);
  for (int level = kMinLevel; level < kMaxLevel; ++level) {
    const auto step = static_cast<std::size_t>(level - kMinLevel);
    Var down = down_[step](tape, s.level(level));
    s.level(level + 1) = fuse_[step](tape, add(down, p.level(level + 1)));
  }
  return s;
}

}  // namespace tumordet
