#pragma once

#include "tumordet/box.hpp"
#include "tumordet/parameters.hpp"
#include "tumordet/pyramid.hpp"

#include <span>
#include <vector>

namespace tumordet {

struct AnchorShape {
  double width;
  double height;
  double nominal_area;
};

// Shapes for every (side, ratio) pair, side-major. A ratio is height / width,
// so an anchor keeps area side^2 with w = sqrt(a / r), h = sqrt(a * r).
std::vector<AnchorShape> anchor_shapes(std::span<const double> sides, std::span<const double> ratios);

// Anchors of one level in the layout of the RPN outputs: anchor a at cell
// (y, x) has flat index (a * height + y) * width + x.
struct AnchorLevel {
  int level = kMinLevel;
  Index height = 0;
  Index width = 0;
  Index shapes_per_cell = 0;
  std::vector<Box> boxes;
};

struct AnchorSet {
  std::vector<AnchorLevel> levels;
  Index total() const;
};

// Anchors centred on every cell of every pyramid level.
AnchorSet generate_anchors(Index image_side, const FeaturePyramid& pyramid, std::span<const AnchorShape> shapes);
AnchorSet generate_anchors(Index image_side, const std::array<Index, kLevelCount>& level_sides,
                           std::span<const AnchorShape> shapes);

struct RpnOutput {
  Var objectness;  // [A,H,W] logits
  Var deltas;      // [4A,H,W], channel 4a+k
};

// Shared-weight head: 3x3 conv + ReLU, then sibling 1x1 convs.
class RpnHead {
 public:
  RpnHead(Index channels, Index anchors_per_cell, ParameterStore& store, Rng& rng);

  RpnOutput rpn_forward(Tape& tape, const Var& level_features) const;

  Index channels() const { return channels_; }
  Index anchors_per_cell() const { return anchors_; }

 private:
  Index channels_;
  Index anchors_;
  ConvUnit shared_;
  ConvUnit objectness_;
  ConvUnit deltas_;
};

struct Proposal {
  Box box;
  double objectness = 0;
  int source_level = kMinLevel;
};

struct ProposalParams {
  Index pre_nms_k = 1000;
  double nms_iou = 0.7;
  Index post_nms_k = 100;
  double min_side = 1.0;
};

// Greedy non-maximum suppression. Returns kept indices in descending score
// order; a candidate is dropped once its IOU with a kept box reaches
// `iou_threshold`.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_threshold,
                             std::size_t max_keep);

// Decodes the top pre_nms_k anchors (by objectness, across all levels),
// clips to the image, drops boxes narrower than min_side, and applies NMS.
std::vector<Proposal> decode_proposals(const AnchorSet& anchors, std::span<const RpnOutput> outputs,
                                       double image_side, const ProposalParams& params);

struct RoiSample {
  Box roi;
  int label = 0;  // 1 positive, 0 negative
  Box target;     // matched ground truth for positives, the roi itself otherwise
};

struct RoiSamplingParams {
  Index samples = 512;
  double positive_fraction = 0.5;
  double positive_iou = 0.5;
};

// Positives (max IOU >= positive_iou) are capped at samples*positive_fraction
// and the remainder is filled with negatives. Selection is a seeded shuffle.
std::vector<RoiSample> sample_rois(std::span<const Box> candidates, std::span<const Box> gts,
                                   const RoiSamplingParams& params, Rng& rng);

// Training labels for anchors: 1 positive, 0 negative, -1 ignored.
struct AnchorTargets {
  std::vector<int> labels;
  std::vector<int> matched_gt;
};

struct AnchorMatchParams {
  double positive_iou = 0.7;
  double negative_iou = 0.3;
};

// IOU >= positive_iou is positive, < negative_iou negative; each gt's best
// anchor is also positive so small objects always get a match.
AnchorTargets match_anchors(const AnchorSet& anchors, std::span<const Box> gts, const AnchorMatchParams& params);

// Subsamples labelled anchors to at most `batch`, positives capped at
// batch * positive_fraction; returns flat anchor indices.
std::vector<Index> sample_anchors(const AnchorTargets& targets, Index batch, double positive_fraction, Rng& rng);

}  // namespace tumordet
