#pragma once

#include "tumordet/dataset.hpp"
#include "tumordet/detector.hpp"
#include "tumordet/metrics.hpp"

#include <functional>
#include <span>

namespace tumordet {

struct TrainRecord {
  long iteration = 0;
  double lr = 0;
  StepLosses losses;
  bool skipped = false;  // nothing could be sampled for this image
};

using TrainLogger = std::function<void(const TrainRecord&)>;

// Runs config().iterations SGD steps, one image per step. Images are visited
// in a seeded per-epoch shuffle and, when enabled, flipped by a seeded draw
// over {none, horizontal, vertical, diagonal}. Deterministic given the config.
// `log` sees every log_every-th step plus the last one.
void train_detector(Detector& model, std::span<const LoadedImage> data, const TrainLogger& log = {});

std::vector<ImageResult> predict(const Detector& model, std::span<const LoadedImage> data);

struct AblationVariant {
  std::string name;
  bool augmented_pyramid = false;
  bool feature_fusion = false;
  bool dc_module = false;
};

// none / pyramid / fusion / fusion+dc / pyramid+fusion / all.
const std::array<AblationVariant, 6>& ablation_variants();

// `base` with the variant's component switches and the given seed.
RunConfig variant_config(const RunConfig& base, const AblationVariant& v, std::uint64_t seed);

// Trains a fresh detector on `train` and scores it on `test`.
MetricsReport train_and_evaluate(const RunConfig& cfg, std::span<const LoadedImage> train,
                                 std::span<const LoadedImage> test);

struct AblationRow {
  AblationVariant variant;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsReport> reports;  // one per seed, on the test split
};

using AblationLogger = std::function<void(const AblationVariant&, std::uint64_t seed, const MetricsReport&)>;

// Trains and evaluates every variant once per seed; the seed replaces
// base.seed and every other field is kept.
std::vector<AblationRow> run_ablation(const RunConfig& base, std::span<const LoadedImage> train,
                                      std::span<const LoadedImage> test, std::span<const std::uint64_t> seeds,
                                      const AblationLogger& log = {});

// Columns: variant, the three component flags, mean accuracy, then accuracy per seed.
std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace tumordet
