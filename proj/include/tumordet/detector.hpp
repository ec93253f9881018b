#pragma once

#include "tumordet/config.hpp"
#include "tumordet/dc_module.hpp"
#include "tumordet/fusion.hpp"
#include "tumordet/heads.hpp"
#include "tumordet/proposals.hpp"
#include "tumordet/pyramid.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace tumordet {

struct StepLosses {
  double rpn_classification = 0;
  double rpn_regression = 0;
  double classification = 0;
  double regression = 0;
  std::size_t rois = 0;
  std::size_t positive_rois = 0;

  double total() const { return rpn_classification + rpn_regression + classification + regression; }
};

// Zero mean, unit variance over the whole image; applied before the backbone.
Tensor standardize_image(const Tensor& image);

// The full two-stage detector: backbone -> P pyramid -> S pyramid -> RPN ->
// multi-level fusion -> dependencies block -> score and box heads. Component
// switches in RunConfig reduce it to the plain FPN detector.
class Detector {
 public:
  explicit Detector(const RunConfig& config);

  const RunConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const AnchorSet& anchors() const { return anchors_; }

  struct Features {
    StageFeatures stages;
    FeaturePyramid p;
    FeaturePyramid s;  // equals p when the augmented path is switched off
    std::vector<RpnOutput> rpn;
  };
  Features forward_features(Tape& tape, const Var& image) const;

  // Builds the summed training loss on `tape`. Returns an invalid Var only if
  // nothing at all could be sampled.
  Var training_loss(Tape& tape, const Tensor& image, std::span<const Box> gts, Rng& rng, StepLosses& losses) const;

  // Final scored boxes for one image, after head refinement and NMS.
  std::vector<ScoredBox> detect(const Tensor& image) const;

  // Per-proposal descriptors, routed through the dependencies block(s).
  std::pair<FusedDescriptor, FusedDescriptor> describe(Tape& tape, const Box& proposal, const FeaturePyramid& s) const;

  const Backbone& backbone() const { return *backbone_; }
  const TopDownPyramid& fpn() const { return *fpn_; }
  const AugmentedPath* augmented_path() const { return augmented_.get(); }
  const RpnHead& rpn() const { return *rpn_; }
  const FeatureFusion& fusion() const { return *fusion_; }
  const DependenciesModule* dc() const { return dc_r_.get(); }
  const DetectionHeads& heads() const { return *heads_; }

 private:
  Var rpn_loss(Tape& tape, const Features& features, std::span<const Box> gts, Rng& rng, StepLosses& losses) const;

  RunConfig config_;
  ParameterStore store_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<TopDownPyramid> fpn_;
  std::unique_ptr<AugmentedPath> augmented_;
  std::unique_ptr<RpnHead> rpn_;
  std::unique_ptr<FeatureFusion> fusion_;
  std::unique_ptr<DependenciesModule> dc_r_;
  std::unique_ptr<DependenciesModule> dc_b_;
  std::unique_ptr<DetectionHeads> heads_;
  AnchorSet anchors_;
};

}  // namespace tumordet
