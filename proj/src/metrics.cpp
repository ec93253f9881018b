#include "tumordet/metrics.hpp"

#include "tumordet/config.hpp"

#include <algorithm>
#include <numeric>

namespace tumordet {
namespace {

std::vector<std::size_t> descending_order(std::span<const ScoredBox> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

std::string optional_text(const std::optional<double>& v) { return v ? format_double(*v) : "undefined"; }

// Pooled detection outcomes of a whole set, sorted by descending score.
struct PooledDetections {
  std::vector<double> scores;
  std::vector<bool> true_positive;
  std::size_t gt_count = 0;
};

PooledDetections pool_detections(std::span<const ImageResult> images, double iou_threshold) {
  PooledDetections pooled;
  for (const ImageResult& img : images) {
    const MatchResult m = match_detections(img.dets, img.gts, iou_threshold);
    pooled.gt_count += m.gt_count;
    for (std::size_t i = 0; i < m.dets.size(); ++i) {
      pooled.scores.push_back(m.dets[i].score);
      pooled.true_positive.push_back(m.true_positive[i]);
    }
  }
  std::vector<std::size_t> order(pooled.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pooled.scores[a] > pooled.scores[b]; });
  PooledDetections sorted{{}, {}, pooled.gt_count};
  for (std::size_t i : order) {
    sorted.scores.push_back(pooled.scores[i]);
    sorted.true_positive.push_back(pooled.true_positive[i]);
  }
  return sorted;
}

}  // namespace

MatchResult match_detections(std::span<const ScoredBox> dets, std::span<const Box> gts, double iou_threshold) {
  MatchResult m;
  m.gt_count = gts.size();
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t i : descending_order(dets)) {
    const ScoredBox& d = dets[i];
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double o = iou(d.box, gts[g]);
      if (o > best_iou) {
        best_iou = o;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) taken[static_cast<std::size_t>(best)] = true;
    m.dets.push_back(d);
    m.true_positive.push_back(best >= 0);
    m.matched_gt.push_back(best);
  }
  m.false_negatives = static_cast<std::size_t>(std::count(taken.begin(), taken.end(), false));
  return m;
}

ConfusionRates confusion_metrics(const ConfusionCounts& c) {
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  return {ratio(c.tp, c.tp + c.fn), ratio(c.tn, c.tn + c.fp), ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn)};
}

ConfusionCounts count_outcomes(const ImageResult& image, double score_threshold, double iou_threshold) {
  std::vector<ScoredBox> kept;
  for (const ScoredBox& d : image.dets)
    if (d.score >= score_threshold) kept.push_back(d);
  ConfusionCounts c;
  if (image.gts.empty()) {
    (kept.empty() ? c.tn : c.fp) = 1;
    return c;
  }
  const MatchResult m = match_detections(kept, image.gts, iou_threshold);
  c.tp = static_cast<std::size_t>(std::count(m.true_positive.begin(), m.true_positive.end(), true));
  c.fp = m.dets.size() - c.tp;
  c.fn = m.false_negatives;
  return c;
}

ConfusionCounts count_outcomes(std::span<const ImageResult> images, double score_threshold, double iou_threshold) {
  ConfusionCounts total;
  for (const ImageResult& img : images) total += count_outcomes(img, score_threshold, iou_threshold);
  return total;
}

std::vector<ScoredOutcome> roc_outcomes(std::span<const ImageResult> images, double iou_threshold) {
  std::vector<ScoredOutcome> out;
  for (const ImageResult& img : images) {
    const MatchResult m = match_detections(img.dets, img.gts, iou_threshold);
    for (std::size_t i = 0; i < m.dets.size(); ++i) out.push_back({m.dets[i].score, m.true_positive[i]});
    for (std::size_t k = 0; k < m.false_negatives; ++k) out.push_back({0.0, true});
    if (img.gts.empty() && img.dets.empty()) out.push_back({0.0, false});
  }
  return out;
}

RocCurve roc_auc(std::span<const ScoredOutcome> outcomes) {
  const auto positives = static_cast<std::size_t>(
      std::count_if(outcomes.begin(), outcomes.end(), [](const ScoredOutcome& o) { return o.positive; }));
  const std::size_t negatives = outcomes.size() - positives;
  if (positives == 0) throw MetricsError("roc_auc: no positive outcomes");
  if (negatives == 0) throw MetricsError("roc_auc: no negative outcomes");

  std::vector<ScoredOutcome> sorted(outcomes.begin(), outcomes.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredOutcome& a, const ScoredOutcome& b) { return a.score > b.score; });

  RocCurve roc;
  roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double score = sorted[i].score;
    for (; i < sorted.size() && sorted[i].score == score; ++i) (sorted[i].positive ? tp : fp) += 1;
    const RocPoint prev = roc.points.back();
    const RocPoint next{score, static_cast<double>(fp) / static_cast<double>(negatives),
                        static_cast<double>(tp) / static_cast<double>(positives)};
    roc.auc += (next.fpr - prev.fpr) * (next.tpr + prev.tpr) / 2.0;
    roc.points.push_back(next);
  }
  return roc;
}

double froc_average(std::span<const double> sensitivities) {
  if (sensitivities.empty()) throw MetricsError("froc_average: no sensitivities");
  return std::accumulate(sensitivities.begin(), sensitivities.end(), 0.0) / static_cast<double>(sensitivities.size());
}

FrocCurve froc(std::span<const ImageResult> images, std::span<const double> rates, double iou_threshold) {
  if (images.empty()) throw MetricsError("froc: empty scan set");
  if (rates.empty()) throw MetricsError("froc: no FP/scan rates");
  const PooledDetections pooled = pool_detections(images, iou_threshold);
  if (pooled.gt_count == 0) throw MetricsError("froc: scan set has no lesions");

  // Operating points after each group of tied scores, starting from "emit nothing".
  const double scans = static_cast<double>(images.size());
  const double lesions = static_cast<double>(pooled.gt_count);
  std::vector<FrocPoint> sweep{{0.0, 0.0, std::numeric_limits<double>::infinity(), 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < pooled.scores.size();) {
    const double score = pooled.scores[i];
    for (; i < pooled.scores.size() && pooled.scores[i] == score; ++i) (pooled.true_positive[i] ? tp : fp) += 1;
    sweep.push_back({0.0, static_cast<double>(fp) / scans, score, static_cast<double>(tp) / lesions});
  }

  FrocCurve curve;
  std::vector<double> sens;
  for (double rate : rates) {
    FrocPoint chosen = sweep.front();
    for (const FrocPoint& p : sweep)
      if (p.fp_per_scan <= rate) chosen = p;
    chosen.rate = rate;
    curve.points.push_back(chosen);
    sens.push_back(chosen.sensitivity);
  }
  curve.average = froc_average(sens);
  return curve;
}

MetricsReport evaluate(std::span<const ImageResult> images, double score_threshold, double iou_threshold) {
  MetricsReport r;
  r.score_threshold = score_threshold;
  r.iou_threshold = iou_threshold;
  r.counts = count_outcomes(images, score_threshold, iou_threshold);
  r.rates = confusion_metrics(r.counts);
  const std::vector<ScoredOutcome> outcomes = roc_outcomes(images, iou_threshold);
  const bool has_pos = std::any_of(outcomes.begin(), outcomes.end(), [](const ScoredOutcome& o) { return o.positive; });
  const bool has_neg = std::any_of(outcomes.begin(), outcomes.end(), [](const ScoredOutcome& o) { return !o.positive; });
  if (has_pos && has_neg) r.roc = roc_auc(outcomes);
  const bool any_gt = std::any_of(images.begin(), images.end(), [](const ImageResult& i) { return !i.gts.empty(); });
  if (!images.empty() && any_gt) r.froc = froc(images, kFrocRates, iou_threshold);
  return r;
}

std::string report_csv(const MetricsReport& r) {
  std::string s;
  s += "# detection valid when IOU > " + format_double(r.iou_threshold) + "; operating score threshold " +
       format_double(r.score_threshold) + "\n";
  s += "# tumor-free scan: TN if no detection at or above the threshold, else one FP\n";
  s += "# ROC outcomes: TP detections positive, FP detections negative, missed lesions positive at score 0,\n";
  s += "#   tumor-free scans without any detection negative at score 0\n";
  s += "metric,value\n";
  s += "tp," + std::to_string(r.counts.tp) + "\n";
  s += "fp," + std::to_string(r.counts.fp) + "\n";
  s += "tn," + std::to_string(r.counts.tn) + "\n";
  s += "fn," + std::to_string(r.counts.fn) + "\n";
  s += "sensitivity," + optional_text(r.rates.sensitivity) + "\n";
  s += "specificity," + optional_text(r.rates.specificity) + "\n";
  s += "accuracy," + optional_text(r.rates.accuracy) + "\n";
  s += "auc," + (r.roc ? format_double(r.roc->auc) : std::string("undefined")) + "\n";
  s += "froc_average," + (r.froc ? format_double(r.froc->average) : std::string("undefined")) + "\n";
  return s;
}

std::string roc_csv(const RocCurve& roc) {
  std::string s = "threshold,fpr,tpr\n";
  for (const RocPoint& p : roc.points)
    s += format_double(p.threshold) + "," + format_double(p.fpr) + "," + format_double(p.tpr) + "\n";
  return s;
}

std::string froc_csv(const FrocCurve& froc) {
  std::string s = "rate,sensitivity\n";
  for (const FrocPoint& p : froc.points) s += format_double(p.rate) + "," + format_double(p.sensitivity) + "\n";
  s += "average," + format_double(froc.average) + "\n";
  return s;
}

}  // namespace tumordet
