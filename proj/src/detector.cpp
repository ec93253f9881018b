#include "tumordet/detector.hpp"

#include "tumordet/ops.hpp"

#include <cmath>

namespace tumordet {
namespace {

Var accumulate(const Var& total, const Var& term) { return total.valid() ? add(total, term) : term; }

}  // namespace

Tensor standardize_image(const Tensor& image) {
  Tensor out = image;
  const double mean = image.data().mean();
  const double var = (image.data().array() - mean).square().mean();
  out.data() = (image.data().array() - mean) / std::sqrt(var + 1e-12);
  return out;
}

Detector::Detector(const RunConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const Index channels = config_.pyramid_channels;

  BackboneConfig bc;
  for (std::size_t i = 0; i < 4; ++i) bc.widths[i] = config_.backbone_widths[i];
  bc.blocks_per_stage = config_.blocks_per_stage;
  bc.image_side = config_.image_side;
  backbone_ = std::make_unique<Backbone>(bc, store_, rng);
  fpn_ = std::make_unique<TopDownPyramid>(bc.widths, channels, store_, rng);
  if (config_.use_augmented_pyramid)
    augmented_ = std::make_unique<AugmentedPath>(channels, config_.augmented_relu, store_, rng);

  const auto shapes = anchor_shapes(config_.anchor_sides, config_.anchor_ratios);
  rpn_ = std::make_unique<RpnHead>(channels, static_cast<Index>(shapes.size()), store_, rng);

  FusionConfig fc;
  fc.channels = channels;
  fc.fused_channels = config_.fused_channels;
  fc.pool = config_.pool_size;
  fc.enlarge_w = config_.enlarge_w;
  fc.enlarge_h = config_.enlarge_h;
  fc.image_side = config_.image_side;
  fc.rule = {config_.level_k0, config_.level_canonical, config_.level_min, config_.level_max};
  fc.multi_level = config_.use_feature_fusion;
  fusion_ = std::make_unique<FeatureFusion>(fc, store_, rng);

  if (config_.use_dc_module) {
    dc_r_ = std::make_unique<DependenciesModule>("dc_r", config_.fused_channels, config_.dc_channels, store_, rng);
    if (config_.dc_on_b)
      dc_b_ = std::make_unique<DependenciesModule>("dc_b", config_.fused_channels, config_.dc_channels, store_, rng);
  }
  const Index descriptor = static_cast<Index>(config_.fused_channels) * config_.pool_size * config_.pool_size;
  heads_ = std::make_unique<DetectionHeads>(descriptor, config_.head_hidden, store_, rng);

  std::array<Index, kLevelCount> sides{};
  for (int level = kMinLevel; level <= kMaxLevel; ++level)
    sides[static_cast<std::size_t>(level - kMinLevel)] = config_.image_side >> level;
  anchors_ = generate_anchors(config_.image_side, sides, shapes);
}

Detector::Features Detector::forward_features(Tape& tape, const Var& image) const {
  Features f;
  f.stages = backbone_->extract_features(tape, image);
  f.p = fpn_->build_fpn(tape, f.stages);
  f.s = augmented_ ? augmented_->augment_pyramid(tape, f.p) : f.p;
  for (int level = kMinLevel; level <= kMaxLevel; ++level) f.rpn.push_back(rpn_->rpn_forward(tape, f.s.level(level)));
  return f;
}

std::pair<FusedDescriptor, FusedDescriptor> Detector::describe(Tape& tape, const Box& proposal,
                                                               const FeaturePyramid& s) const {
  auto [b, r] = fusion_->build_descriptors(tape, proposal, s);
  if (dc_r_) r = attach_dc(tape, r, *dc_r_);
  if (dc_b_) b.tensor = dc_b_->forward(tape, b.tensor);
  return {b, r};
}

Var Detector::rpn_loss(Tape& /*tape*/, const Features& features, std::span<const Box> gts, Rng& rng,
                       StepLosses& losses) const {
  const AnchorTargets targets =
      match_anchors(anchors_, gts, {config_.rpn_positive_iou, config_.rpn_negative_iou});
  const std::vector<Index> picked = sample_anchors(targets, config_.rpn_batch, config_.rpn_positive_fraction, rng);
  if (picked.empty()) return {};

  const std::size_t levels = anchors_.levels.size();
  std::vector<std::vector<Index>> cls_idx(levels), box_idx(levels);
  std::vector<std::vector<double>> cls_labels(levels), box_targets(levels);
  std::vector<Index> offsets(levels + 1, 0);
  for (std::size_t l = 0; l < levels; ++l)
    offsets[l + 1] = offsets[l] + static_cast<Index>(anchors_.levels[l].boxes.size());

  std::size_t positives = 0;
  for (Index flat : picked) {
    std::size_t l = 0;
    while (flat >= offsets[l + 1]) ++l;
    const Index local = flat - offsets[l];
    const int label = targets.labels[static_cast<std::size_t>(flat)];
    cls_idx[l].push_back(local);
    cls_labels[l].push_back(label);
    if (label != 1) continue;
    ++positives;
    const AnchorLevel& al = anchors_.levels[l];
    const Index cells = al.height * al.width;
    const Index a = local / cells, pos = local % cells;
    const Box& anchor = al.boxes[static_cast<std::size_t>(local)];
    const Deltas t = encode_box(gts[static_cast<std::size_t>(targets.matched_gt[static_cast<std::size_t>(flat)])], anchor);
    for (Index k = 0; k < 4; ++k) {
      box_idx[l].push_back((4 * a + k) * cells + pos);
      box_targets[l].push_back(t[k]);
    }
  }

  Var cls, box;
  for (std::size_t l = 0; l < levels; ++l) {
    if (!cls_idx[l].empty())
      cls = accumulate(cls, bce_with_logits(gather(features.rpn[l].objectness, cls_idx[l]), cls_labels[l]));
    if (!box_idx[l].empty())
      box = accumulate(box, smooth_l1(gather(features.rpn[l].deltas, box_idx[l]), box_targets[l]));
  }
  cls = scale(cls, 1.0 / static_cast<double>(picked.size()));
  losses.rpn_classification = cls.value()[0];
  if (!box.valid()) return cls;
  box = scale(box, 1.0 / static_cast<double>(positives));
  losses.rpn_regression = box.value()[0];
  return add(cls, box);
}

Var Detector::training_loss(Tape& tape, const Tensor& image, std::span<const Box> gts, Rng& rng,
                            StepLosses& losses) const {
  losses = {};
  const Features features = forward_features(tape, tape.constant(standardize_image(image)));
  Var total = rpn_loss(tape, features, gts, rng, losses);

  const double side = config_.image_side;
  const std::vector<Proposal> proposals = decode_proposals(
      anchors_, features.rpn, side, {config_.pre_nms_k, config_.nms_iou, config_.post_nms_k, 1.0});
  std::vector<Box> candidates;
  candidates.reserve(proposals.size() + gts.size());
  for (const Proposal& p : proposals) candidates.push_back(p.box);
  candidates.insert(candidates.end(), gts.begin(), gts.end());
  const std::vector<RoiSample> samples = sample_rois(
      candidates, gts, {config_.roi_samples, config_.roi_positive_fraction, config_.roi_positive_iou}, rng);
  if (samples.empty()) return total;

  std::vector<FusedDescriptor> b_descs, r_descs;
  b_descs.reserve(samples.size());
  r_descs.reserve(samples.size());
  for (const RoiSample& s : samples) {
    auto [b, r] = describe(tape, s.roi, features.s);
    b_descs.push_back(b);
    r_descs.push_back(r);
    if (s.label == 1) ++losses.positive_rois;
  }
  losses.rois = samples.size();
  const HeadOutputs out = heads_->forward(tape, b_descs, r_descs);
  const Deltas weights(config_.head_delta_weights.data());
  const StageLoss stage = detection_loss(samples, out, weights);
  losses.classification = stage.classification.value()[0];
  total = accumulate(total, stage.classification);
  if (stage.regression.valid()) {
    losses.regression = stage.regression.value()[0];
    total = add(total, stage.regression);
  }
  return total;
}

std::vector<ScoredBox> Detector::detect(const Tensor& image) const {
  Tape tape(false);
  const Features features = forward_features(tape, tape.constant(standardize_image(image)));
  const double side = config_.image_side;
  const std::vector<Proposal> proposals = decode_proposals(
      anchors_, features.rpn, side, {config_.pre_nms_k, config_.nms_iou, config_.test_post_nms_k, 1.0});
  if (proposals.empty()) return {};

  std::vector<FusedDescriptor> b_descs, r_descs;
  for (const Proposal& p : proposals) {
    auto [b, r] = describe(tape, p.box, features.s);
    b_descs.push_back(b);
    r_descs.push_back(r);
  }
  const HeadOutputs out = heads_->forward(tape, b_descs, r_descs);
  const Deltas weights(config_.head_delta_weights.data());

  std::vector<Box> boxes;
  std::vector<double> scores;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    Deltas d;
    for (Index k = 0; k < 4; ++k) d[k] = out.deltas.value()[static_cast<Index>(4 * i) + k];
    const Box box = clip(decode_box(d, proposals[i].box, weights), side, side);
    const double score = 1.0 / (1.0 + std::exp(-out.logits.value()[static_cast<Index>(i)]));
    if (!box.valid() || score < config_.det_min_score) continue;
    boxes.push_back(box);
    scores.push_back(score);
  }
  std::vector<ScoredBox> dets;
  for (std::size_t i : nms(boxes, scores, config_.det_nms_iou, static_cast<std::size_t>(config_.det_max_per_image)))
    dets.push_back({boxes[i], scores[i]});
  return dets;
}

}  // namespace tumordet
