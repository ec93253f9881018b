#pragma once

#include "tumordet/box.hpp"

#include <array>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tumordet {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Everything the evaluator needs about one scan.
struct ImageResult {
  std::string id;
  std::vector<Box> gts;
  std::vector<ScoredBox> dets;
};

// Detections in descending score order (stable for ties), each flagged TP or
// FP. A detection is TP when it claims a still-unmatched gt with IOU > threshold.
struct MatchResult {
  std::vector<ScoredBox> dets;
  std::vector<bool> true_positive;
  std::vector<int> matched_gt;  // -1 for false positives
  std::size_t gt_count = 0;
  std::size_t false_negatives = 0;
};

MatchResult match_detections(std::span<const ScoredBox> dets, std::span<const Box> gts, double iou_threshold = 0.5);

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

// Ratios with an empty denominator are std::nullopt.
struct ConfusionRates {
  std::optional<double> sensitivity, specificity, accuracy;
};

ConfusionRates confusion_metrics(const ConfusionCounts& c);

// Counts at an operating point. Tumor-bearing scans contribute detection-level
// TP/FP and gt-level FN. A tumor-free scan is one negative: TN when it has no
// detection at or above the threshold, one FP otherwise.
ConfusionCounts count_outcomes(const ImageResult& image, double score_threshold, double iou_threshold = 0.5);
ConfusionCounts count_outcomes(std::span<const ImageResult> images, double score_threshold, double iou_threshold = 0.5);

struct ScoredOutcome {
  double score = 0;
  bool positive = false;
};

// ROC outcomes: TP detections are positives and FP detections negatives at
// their scores; missed gts are positives at score 0; tumor-free scans with no
// detection at all are negatives at score 0.
std::vector<ScoredOutcome> roc_outcomes(std::span<const ImageResult> images, double iou_threshold = 0.5);

struct RocPoint {
  double threshold = 0;
  double fpr = 0;
  double tpr = 0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) at threshold +inf to (1,1)
  double auc = 0;
};

// One point per distinct score; tied scores move both rates in one step, which
// makes the trapezoidal area equal the tie-aware pairwise concordance.
RocCurve roc_auc(std::span<const ScoredOutcome> outcomes);

inline constexpr std::array<double, 7> kFrocRates{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

struct FrocPoint {
  double rate = 0;         // allowed false positives per scan
  double fp_per_scan = 0;  // achieved at the chosen threshold
  double threshold = std::numeric_limits<double>::infinity();
  double sensitivity = 0;
};

struct FrocCurve {
  std::vector<FrocPoint> points;
  double average = 0;
};

double froc_average(std::span<const double> sensitivities);

// For each rate picks the threshold with the largest FP/scan not above it; no
// interpolation. FPs are counted on every scan, tumor-free ones included.
FrocCurve froc(std::span<const ImageResult> images, std::span<const double> rates = kFrocRates,
               double iou_threshold = 0.5);

struct MetricsReport {
  ConfusionCounts counts;
  ConfusionRates rates;
  double score_threshold = 0.5;
  double iou_threshold = 0.5;
  std::optional<RocCurve> roc;  // absent when only one outcome class exists
  std::optional<FrocCurve> froc;  // absent when the set has no gt at all
};

MetricsReport evaluate(std::span<const ImageResult> images, double score_threshold = 0.5, double iou_threshold = 0.5);

std::string report_csv(const MetricsReport& report);
std::string roc_csv(const RocCurve& roc);
std::string froc_csv(const FrocCurve& froc);

}  // namespace tumordet
