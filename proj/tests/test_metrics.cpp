#include "oracles.hpp"

#include "tumordet/metrics.hpp"
#include "tumordet/parameters.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace tumordet {
namespace {

using testing::pairwise_auc;
using testing::raster_iou;

BasicBox<int> random_int_box(Rng& rng) {
  std::uniform_int_distribution<int> pos(0, 40), ext(1, 25);
  const int x = pos(rng), y = pos(rng);
  return {x, y, x + ext(rng), y + ext(rng)};
}

TEST(Iou, HandExamples) {
  const Box a{0, 0, 10, 10};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, Box{20, 20, 30, 30}), 0.0);
  EXPECT_NEAR(iou(a, Box{5, 5, 15, 15}), 25.0 / 175.0, 1e-15);
}

TEST(Iou, MatchesRasterOracleAndIsSymmetric) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const auto a = random_int_box(rng), b = random_int_box(rng);
    const double v = iou(a.cast<double>(), b.cast<double>());
    ASSERT_NEAR(v, raster_iou(a, b), 1e-9);
    ASSERT_EQ(v, iou(b.cast<double>(), a.cast<double>()));
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Match, SpecExamples) {
  const std::vector<Box> gt{{0, 0, 10, 10}};
  const std::vector<ScoredBox> good{{{0, 0, 10, 6}, 0.9}};
  ASSERT_NEAR(iou(good[0].box, gt[0]), 0.6, 1e-12);
  const MatchResult m1 = match_detections(good, gt);
  EXPECT_TRUE(m1.true_positive[0]);
  EXPECT_EQ(m1.false_negatives, 0u);

  const std::vector<ScoredBox> poor{{{0, 0, 10, 4}, 0.9}};
  const MatchResult m2 = match_detections(poor, gt);
  EXPECT_FALSE(m2.true_positive[0]);
  EXPECT_EQ(m2.false_negatives, 1u);

  const std::vector<ScoredBox> twice{{{0, 0, 10, 9}, 0.8}, {{0, 0, 10, 8}, 0.9}};
  const MatchResult m3 = match_detections(twice, gt);
  ASSERT_EQ(m3.dets.size(), 2u);
  EXPECT_EQ(m3.dets[0].score, 0.9);
  EXPECT_TRUE(m3.true_positive[0]);
  EXPECT_FALSE(m3.true_positive[1]);

  // Exactly 0.5 is not "higher than 0.5".
  const std::vector<ScoredBox> half{{{0, 0, 10, 5}, 0.9}};
  EXPECT_FALSE(match_detections(half, gt).true_positive[0]);
}

TEST(Match, ConservesCounts) {
  Rng rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Box> gts;
    std::vector<ScoredBox> dets;
    for (int i = 0; i < 3; ++i) gts.push_back(random_int_box(rng).cast<double>());
    for (int i = 0; i < 6; ++i) dets.push_back({random_int_box(rng).cast<double>(), u(rng)});
    const MatchResult m = match_detections(dets, gts);
    const auto tp = static_cast<std::size_t>(std::count(m.true_positive.begin(), m.true_positive.end(), true));
    EXPECT_EQ(tp + m.false_negatives, gts.size());
    EXPECT_EQ(m.dets.size(), dets.size());
  }
}

TEST(Confusion, RatioArithmeticAndUndefined) {
  const ConfusionRates r = confusion_metrics({5, 1, 9, 5});
  EXPECT_DOUBLE_EQ(*r.sensitivity, 0.5);
  EXPECT_DOUBLE_EQ(*r.specificity, 0.9);
  EXPECT_DOUBLE_EQ(*r.accuracy, 0.7);
  const ConfusionRates perfect = confusion_metrics({4, 0, 3, 0});
  EXPECT_EQ(*perfect.sensitivity, 1.0);
  EXPECT_EQ(*perfect.specificity, 1.0);
  EXPECT_EQ(*perfect.accuracy, 1.0);
  EXPECT_FALSE(confusion_metrics({0, 2, 3, 0}).sensitivity.has_value());
  const ConfusionRates empty = confusion_metrics({});
  EXPECT_FALSE(empty.sensitivity || empty.specificity || empty.accuracy);
}

TEST(Confusion, TumorFreeScansAreImageLevelNegatives) {
  const ImageResult clean{"a", {}, {{{0, 0, 5, 5}, 0.2}}};
  const ImageResult flagged{"b", {}, {{{0, 0, 5, 5}, 0.7}, {{10, 10, 15, 15}, 0.9}}};
  EXPECT_EQ(count_outcomes(clean, 0.5), (ConfusionCounts{0, 0, 1, 0}));
  EXPECT_EQ(count_outcomes(flagged, 0.5), (ConfusionCounts{0, 1, 0, 0}));
  const ImageResult tumor{"c", {{0, 0, 10, 10}}, {{{0, 0, 10, 9}, 0.8}, {{20, 20, 30, 30}, 0.6}, {{0, 0, 9, 10}, 0.3}}};
  EXPECT_EQ(count_outcomes(tumor, 0.5), (ConfusionCounts{1, 1, 0, 0}));
}

TEST(RocAuc, SpecExamples) {
  const std::vector<ScoredOutcome> separated{{0.9, true}, {0.8, true}, {0.3, false}, {0.1, false}};
  EXPECT_EQ(roc_auc(separated).auc, 1.0);
  const std::vector<ScoredOutcome> tied{{0.5, true}, {0.5, false}, {0.5, true}, {0.5, false}};
  const RocCurve t = roc_auc(tied);
  EXPECT_EQ(t.auc, 0.5);
  EXPECT_EQ(t.points.size(), 2u);
  const std::vector<ScoredOutcome> mixed{{0.9, true}, {0.4, true}, {0.6, false}, {0.1, false}};
  EXPECT_DOUBLE_EQ(roc_auc(mixed).auc, 0.75);
}

TEST(RocAuc, SingleClassNamesMissingClass) {
  const std::vector<ScoredOutcome> pos_only{{0.9, true}};
  try {
    roc_auc(pos_only);
    FAIL();
  } catch (const MetricsError& e) {
    EXPECT_NE(std::string(e.what()).find("negative"), std::string::npos);
  }
  const std::vector<ScoredOutcome> neg_only{{0.9, false}};
  try {
    roc_auc(neg_only);
    FAIL();
  } catch (const MetricsError& e) {
    EXPECT_NE(std::string(e.what()).find("positive"), std::string::npos);
  }
}

TEST(RocAuc, TrapezoidEqualsPairwiseOracleAndCurveIsMonotone) {
  Rng rng(3);
  std::uniform_int_distribution<int> size(2, 30), level(0, 6);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<ScoredOutcome> outs;
    const int n = size(rng);
    // Coarse score levels force many ties.
    for (int i = 0; i < n; ++i) outs.push_back({level(rng) / 6.0, coin(rng)});
    outs.push_back({level(rng) / 6.0, true});
    outs.push_back({level(rng) / 6.0, false});
    const RocCurve roc = roc_auc(outs);
    ASSERT_NEAR(roc.auc, pairwise_auc(outs), 1e-9);
    ASSERT_GE(roc.auc, 0.0);
    ASSERT_LE(roc.auc, 1.0);
    for (std::size_t i = 1; i < roc.points.size(); ++i) {
      ASSERT_GE(roc.points[i].fpr, roc.points[i - 1].fpr);
      ASSERT_GE(roc.points[i].tpr, roc.points[i - 1].tpr);
    }
    ASSERT_EQ(roc.points.back().fpr, 1.0);
    ASSERT_EQ(roc.points.back().tpr, 1.0);
  }
}

TEST(Froc, AverageOfSevenRateSensitivities) {
  const std::vector<double> sens{0.671, 0.804, 0.907, 0.963, 0.977, 0.986, 0.998};
  EXPECT_NEAR(froc_average(sens), 0.901, 0.0005);
}

TEST(Froc, PerfectAndSilentDetectors) {
  std::vector<ImageResult> perfect, silent;
  for (int i = 0; i < 4; ++i) {
    const Box gt{10.0 * i, 5, 10.0 * i + 20, 30};
    perfect.push_back({"p" + std::to_string(i), {gt}, {{gt, 1.0}}});
    silent.push_back({"s" + std::to_string(i), {gt}, {}});
  }
  perfect.push_back({"clean", {}, {}});
  const FrocCurve p = froc(perfect);
  ASSERT_EQ(p.points.size(), 7u);
  for (const FrocPoint& pt : p.points) EXPECT_EQ(pt.sensitivity, 1.0);
  EXPECT_EQ(p.average, 1.0);
  const FrocCurve s = froc(silent);
  for (const FrocPoint& pt : s.points) EXPECT_EQ(pt.sensitivity, 0.0);
  EXPECT_THROW(froc(std::vector<ImageResult>{}), MetricsError);
}

TEST(Froc, PicksLargestRateNotAboveTarget) {
  // Two scans, one lesion each. Sorted: TP 0.9, FP 0.8, FP 0.7, TP 0.6, FP 0.5.
  const std::vector<ImageResult> scans{
      {"a", {{0, 0, 10, 10}}, {{{0, 0, 10, 10}, 0.9}, {{50, 50, 60, 60}, 0.8}, {{70, 70, 80, 80}, 0.5}}},
      {"b", {{0, 0, 10, 10}}, {{{30, 30, 40, 40}, 0.7}, {{0, 0, 10, 10}, 0.6}}},
  };
  const std::vector<double> rates{0.25, 0.5, 1.0, 1.5};
  const FrocCurve c = froc(scans, rates);
  EXPECT_EQ(c.points[0].sensitivity, 0.5);  // 0 FP/scan
  EXPECT_EQ(c.points[1].sensitivity, 0.5);  // 0.5 FP/scan at threshold 0.8
  EXPECT_EQ(c.points[2].sensitivity, 1.0);  // 1.0 FP/scan at threshold 0.6
  EXPECT_EQ(c.points[3].sensitivity, 1.0);
  EXPECT_EQ(c.points[1].threshold, 0.8);
  EXPECT_EQ(c.points[2].threshold, 0.6);
}

TEST(Froc, NonDecreasingInRate) {
  Rng rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ImageResult> scans;
    for (int i = 0; i < 5; ++i) {
      ImageResult r{std::to_string(i), {}, {}};
      if (u(rng) < 0.7) r.gts.push_back({20, 20, 50, 50});
      for (int d = 0; d < 4; ++d) {
        const double off = u(rng) * 30;
        r.dets.push_back({{20 + off, 20, 50 + off, 50}, u(rng)});
      }
      scans.push_back(r);
    }
    scans[0].gts = {{20, 20, 50, 50}};
    const FrocCurve c = froc(scans);
    for (std::size_t i = 1; i < c.points.size(); ++i) ASSERT_GE(c.points[i].sensitivity, c.points[i - 1].sensitivity);
  }
}

TEST(Report, CsvLayouts) {
  const std::vector<ImageResult> scans{{"a", {{0, 0, 10, 10}}, {{{0, 0, 10, 10}, 0.9}}}, {"b", {}, {}}};
  const MetricsReport r = evaluate(scans);
  ASSERT_TRUE(r.roc && r.froc);
  EXPECT_EQ(r.counts, (ConfusionCounts{1, 0, 1, 0}));
  EXPECT_EQ(roc_csv(*r.roc).substr(0, 18), "threshold,fpr,tpr\n");
  EXPECT_EQ(froc_csv(*r.froc).substr(0, 17), "rate,sensitivity\n");
  const std::string rep = report_csv(r);
  EXPECT_EQ(rep[0], '#');
  EXPECT_NE(rep.find("accuracy,1\n"), std::string::npos);
  EXPECT_NE(rep.find("auc,1\n"), std::string::npos);
}

}  // namespace
}  // namespace tumordet
