#include "tumordet/training.hpp"

#include "tumordet/config.hpp"

#include <algorithm>
#include <numeric>

namespace tumordet {
namespace {

constexpr std::uint64_t kShuffleStream = 0x5eed5a11ULL;
constexpr std::uint64_t kSampleStream = 0x5a3b1e5ULL;

}  // namespace

void train_detector(Detector& model, std::span<const LoadedImage> data, const TrainLogger& log) {
  const RunConfig& cfg = model.config();
  const long total = cfg.iterations;
  if (total == 0) return;
  if (data.empty()) throw DataError("train: empty training set");

  SgdOptimizer sgd(model.parameters(), cfg.momentum, cfg.weight_decay,
                   LearningRateSchedule::scaled(cfg.lr_rates, cfg.lr_phases, total));
  Rng order_rng(cfg.seed ^ kShuffleStream);
  Rng sample_rng(cfg.seed ^ kSampleStream);
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();

  for (long it = 0; it < total; ++it) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    const LoadedImage& item = data[order[cursor++]];
    const int flip = cfg.flip_augmentation ? static_cast<int>(order_rng() % 4) : 0;
    Tensor image = item.image;
    std::vector<Box> gts = item.gts;
    if (flip > 0) std::tie(image, gts) = augment_flips(item.image, item.gts, static_cast<FlipMode>(flip - 1));

    TrainRecord rec;
    rec.iteration = it + 1;
    rec.lr = sgd.current_lr();
    Tape tape;
    const Var loss = model.training_loss(tape, image, gts, sample_rng, rec.losses);
    if (loss.valid()) {
      tape.backward(loss);
      if (cfg.grad_clip > 0) sgd.clip_gradients(cfg.grad_clip);
      sgd.step();
    } else {
      rec.skipped = true;
      model.parameters().zero_grad();
      sgd.set_iteration(sgd.iteration() + 1);
    }
    if (log && (rec.iteration % cfg.log_every == 0 || rec.iteration == total)) log(rec);
  }
}

std::vector<ImageResult> predict(const Detector& model, std::span<const LoadedImage> data) {
  std::vector<ImageResult> out;
  out.reserve(data.size());
  for (const LoadedImage& item : data) out.push_back({item.id, item.gts, model.detect(item.image)});
  return out;
}

const std::array<AblationVariant, 6>& ablation_variants() {
  static const std::array<AblationVariant, 6> variants{{
      {"none", false, false, false},
      {"pyramid", true, false, false},
      {"fusion", false, true, false},
      {"fusion+dc", false, true, true},
      {"pyramid+fusion", true, true, false},
      {"all", true, true, true},
  }};
  return variants;
}

RunConfig variant_config(const RunConfig& base, const AblationVariant& v, std::uint64_t seed) {
  RunConfig cfg = base;
  cfg.seed = seed;
  cfg.use_augmented_pyramid = v.augmented_pyramid;
  cfg.use_feature_fusion = v.feature_fusion;
  cfg.use_dc_module = v.dc_module;
  return cfg;
}

MetricsReport train_and_evaluate(const RunConfig& cfg, std::span<const LoadedImage> train,
                                 std::span<const LoadedImage> test) {
  Detector model(cfg);
  train_detector(model, train);
  return evaluate(predict(model, test), cfg.score_threshold, cfg.match_iou);
}

std::vector<AblationRow> run_ablation(const RunConfig& base, std::span<const LoadedImage> train,
                                      std::span<const LoadedImage> test, std::span<const std::uint64_t> seeds,
                                      const AblationLogger& log) {
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : ablation_variants()) {
    AblationRow row{v, {seeds.begin(), seeds.end()}, {}};
    for (std::uint64_t seed : seeds) {
      row.reports.push_back(train_and_evaluate(variant_config(base, v, seed), train, test));
      if (log) log(v, seed, row.reports.back());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string s = "variant,augmented_pyramid,feature_fusion,dc_module,accuracy";
  if (!rows.empty())
    for (std::uint64_t seed : rows.front().seeds) s += ",accuracy_seed" + std::to_string(seed);
  s += "\n";
  for (const AblationRow& r : rows) {
    double sum = 0;
    std::string per_seed;
    for (const MetricsReport& rep : r.reports) {
      const double acc = rep.rates.accuracy.value_or(0.0);
      sum += acc;
      per_seed += "," + format_double(acc);
    }
    const double mean = r.reports.empty() ? 0.0 : sum / static_cast<double>(r.reports.size());
    s += r.variant.name + "," + (r.variant.augmented_pyramid ? "1" : "0") + "," + (r.variant.feature_fusion ? "1" : "0") +
         "," + (r.variant.dc_module ? "1" : "0") + "," + format_double(mean) + per_seed + "\n";
  }
  return s;
}

}  // namespace tumordet
