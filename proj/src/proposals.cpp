#include "tumordet/proposals.hpp"

#include "tumordet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tumordet {

std::vector<AnchorShape> anchor_shapes(std::span<const double> sides, std::span<const double> ratios) {
  std::vector<AnchorShape> shapes;
  shapes.reserve(sides.size() * ratios.size());
  for (double side : sides) {
    const double area = side * side;
    for (double ratio : ratios) shapes.push_back({std::sqrt(area / ratio), std::sqrt(area * ratio), area});
  }
  return shapes;
}

Index AnchorSet::total() const {
  Index n = 0;
  for (const auto& l : levels) n += static_cast<Index>(l.boxes.size());
  return n;
}

AnchorSet generate_anchors(Index image_side, const std::array<Index, kLevelCount>& level_sides,
                           std::span<const AnchorShape> shapes) {
  AnchorSet set;
  for (int level = kMinLevel; level <= kMaxLevel; ++level) {
    const Index side = level_sides[static_cast<std::size_t>(level - kMinLevel)];
    const double stride = static_cast<double>(image_side) / static_cast<double>(side);
    AnchorLevel al;
    al.level = level;
    al.height = side;
    al.width = side;
    al.shapes_per_cell = static_cast<Index>(shapes.size());
    al.boxes.reserve(shapes.size() * static_cast<std::size_t>(side * side));
    for (const AnchorShape& s : shapes)
      for (Index y = 0; y < side; ++y)
        for (Index x = 0; x < side; ++x)
          al.boxes.push_back(Box::from_center((static_cast<double>(x) + 0.5) * stride,
                                              (static_cast<double>(y) + 0.5) * stride, s.width, s.height));
    set.levels.push_back(std::move(al));
  }
  return set;
}

AnchorSet generate_anchors(Index image_side, const FeaturePyramid& pyramid, std::span<const AnchorShape> shapes) {
  std::array<Index, kLevelCount> sides{};
  for (int level = kMinLevel; level <= kMaxLevel; ++level) {
    const Shape& s = pyramid.level(level).shape();
    if (s[1] != s[2]) throw ShapeError("anchors expect square feature maps, got " + to_string(s));
    sides[static_cast<std::size_t>(level - kMinLevel)] = s[1];
  }
  return generate_anchors(image_side, sides, shapes);
}

RpnHead::RpnHead(Index channels, Index anchors_per_cell, ParameterStore& store, Rng& rng)
    : channels_(channels), anchors_(anchors_per_cell) {
  shared_ = ConvUnit::create(store, "rpn.conv", channels, channels, 3, 1, true, rng);
  objectness_ = ConvUnit::create(store, "rpn.objectness", channels, anchors_per_cell, 1, 1, false, rng);
  deltas_ = ConvUnit::create(store, "rpn.deltas", channels, 4 * anchors_per_cell, 1, 1, false, rng);
  // Output layers start near zero so early proposals are the anchors themselves.
  std::normal_distribution<double> small(0.0, 0.01);
  for (Parameter* p : {objectness_.weight, deltas_.weight})
    for (Index i = 0; i < p->value.size(); ++i) p->value[i] = small(rng);
}

RpnOutput RpnHead::rpn_forward(Tape& tape, const Var& level_features) const {
  const Shape& s = level_features.shape();
  if (s.size() != 3 || s[0] != channels_)
    throw ShapeError("rpn_forward expects [" + std::to_string(channels_) + ",H,W], got " + to_string(s));
  Var hidden = shared_(tape, level_features);
  return {objectness_(tape, hidden), deltas_(tape, hidden)};
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_threshold,
                             std::size_t max_keep) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  std::vector<bool> removed(boxes.size(), false);
  for (std::size_t oi = 0; oi < order.size() && keep.size() < max_keep; ++oi) {
    const std::size_t i = order[oi];
    if (removed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!removed[j] && iou(boxes[i], boxes[j]) >= iou_threshold) removed[j] = true;
    }
  }
  return keep;
}

std::vector<Proposal> decode_proposals(const AnchorSet& anchors, std::span<const RpnOutput> outputs,
                                       double image_side, const ProposalParams& params) {
  if (outputs.size() != anchors.levels.size()) throw ShapeError("decode_proposals: one RPN output per level required");
  struct Candidate {
    double logit;
    std::size_t level;
    Index local;
  };
  std::vector<Candidate> all;
  all.reserve(static_cast<std::size_t>(anchors.total()));
  for (std::size_t l = 0; l < anchors.levels.size(); ++l) {
    const Tensor& obj = outputs[l].objectness.value();
    if (obj.size() != static_cast<Index>(anchors.levels[l].boxes.size()))
      throw ShapeError("decode_proposals: objectness " + to_string(obj.shape()) + " does not match anchors");
    for (Index i = 0; i < obj.size(); ++i) all.push_back({obj[i], l, i});
  }
  const auto k = std::min<std::size_t>(all.size(), static_cast<std::size_t>(params.pre_nms_k));
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Candidate& a, const Candidate& b) {
                      if (a.logit != b.logit) return a.logit > b.logit;
                      if (a.level != b.level) return a.level < b.level;
                      return a.local < b.local;
                    });

  std::vector<Box> boxes;
  std::vector<double> scores;
  std::vector<int> levels;
  for (std::size_t c = 0; c < k; ++c) {
    const Candidate& cand = all[c];
    const AnchorLevel& al = anchors.levels[cand.level];
    const Index cells = al.height * al.width;
    const Index a = cand.local / cells, pos = cand.local % cells;
    const Tensor& d = outputs[cand.level].deltas.value();
    Deltas delta;
    for (Index j = 0; j < 4; ++j) delta[j] = d[(4 * a + j) * cells + pos];
    const Box box = clip(decode_box(delta, al.boxes[static_cast<std::size_t>(cand.local)]), image_side, image_side);
    if (box.width() < params.min_side || box.height() < params.min_side) continue;
    boxes.push_back(box);
    scores.push_back(1.0 / (1.0 + std::exp(-cand.logit)));
    levels.push_back(al.level);
  }
  std::vector<Proposal> out;
  for (std::size_t i : nms(boxes, scores, params.nms_iou, static_cast<std::size_t>(params.post_nms_k)))
    out.push_back({boxes[i], scores[i], levels[i]});
  return out;
}

std::vector<RoiSample> sample_rois(std::span<const Box> candidates, std::span<const Box> gts,
                                   const RoiSamplingParams& params, Rng& rng) {
  std::vector<std::size_t> positives, negatives;
  std::vector<int> best_gt(candidates.size(), -1);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double best = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(candidates[i], gts[g]);
      if (o > best) {
        best = o;
        best_gt[i] = static_cast<int>(g);
      }
    }
    (best >= params.positive_iou ? positives : negatives).push_back(i);
  }
  std::shuffle(positives.begin(), positives.end(), rng);
  std::shuffle(negatives.begin(), negatives.end(), rng);
  const auto pos_cap = static_cast<std::size_t>(std::floor(static_cast<double>(params.samples) * params.positive_fraction));
  const std::size_t n_pos = std::min(positives.size(), pos_cap);
  const std::size_t n_neg = std::min(negatives.size(), static_cast<std::size_t>(params.samples) - n_pos);

  std::vector<RoiSample> out;
  out.reserve(n_pos + n_neg);
  for (std::size_t i = 0; i < n_pos; ++i) {
    const std::size_t c = positives[i];
    out.push_back({candidates[c], 1, gts[static_cast<std::size_t>(best_gt[c])]});
  }
  for (std::size_t i = 0; i < n_neg; ++i) {
    const std::size_t c = negatives[i];
    out.push_back({candidates[c], 0, candidates[c]});
  }
  return out;
}

AnchorTargets match_anchors(const AnchorSet& anchors, std::span<const Box> gts, const AnchorMatchParams& params) {
  const auto n = static_cast<std::size_t>(anchors.total());
  AnchorTargets t;
  t.labels.assign(n, 0);
  t.matched_gt.assign(n, -1);
  if (gts.empty()) return t;
  std::vector<double> best(n, 0.0);
  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<std::vector<std::size_t>> gt_argmax(gts.size());
  std::size_t flat = 0;
  for (const AnchorLevel& al : anchors.levels) {
    for (const Box& a : al.boxes) {
      for (std::size_t g = 0; g < gts.size(); ++g) {
        const double o = iou(a, gts[g]);
        if (o > best[flat]) {
          best[flat] = o;
          t.matched_gt[flat] = static_cast<int>(g);
        }
        if (o > gt_best[g]) {
          gt_best[g] = o;
          gt_argmax[g].clear();
        }
        if (o > 0 && o == gt_best[g]) gt_argmax[g].push_back(flat);
      }
      ++flat;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (best[i] >= params.positive_iou) {
      t.labels[i] = 1;
    } else if (best[i] >= params.negative_iou) {
      t.labels[i] = -1;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    for (std::size_t i : gt_argmax[g]) {
      t.labels[i] = 1;
      t.matched_gt[i] = static_cast<int>(g);
    }
  }
  return t;
}

std::vector<Index> sample_anchors(const AnchorTargets& targets, Index batch, double positive_fraction, Rng& rng) {
  std::vector<Index> pos, neg;
  for (std::size_t i = 0; i < targets.labels.size(); ++i) {
    if (targets.labels[i] == 1) pos.push_back(static_cast<Index>(i));
    if (targets.labels[i] == 0) neg.push_back(static_cast<Index>(i));
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const auto n_pos = std::min<std::size_t>(pos.size(), static_cast<std::size_t>(static_cast<double>(batch) * positive_fraction));
  const auto n_neg = std::min<std::size_t>(neg.size(), static_cast<std::size_t>(batch) - n_pos);
  std::vector<Index> out(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_pos));
  out.insert(out.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_neg));
  return out;
}

}  // namespace tumordet
