#include "tumordet/cli.hpp"

#include "tumordet/checkpoint.hpp"
#include "tumordet/config.hpp"
#include "tumordet/dataset.hpp"
#include "tumordet/metrics.hpp"
#include "tumordet/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <sstream>

namespace tumordet {
namespace {

namespace fs = std::filesystem;

fs::path data_dir(const std::string& flag) {
  if (const char* env = std::getenv(kDataDirEnv); env != nullptr && *env != '\0') return env;
  return flag;
}

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : RunConfig::load(path); }

std::string log_line(const TrainRecord& r) {
  std::ostringstream s;
  s << "iter " << r.iteration << " lr " << format_double(r.lr);
  if (r.skipped) return s.str() + " skipped";
  s << " loss " << r.losses.total() << " rpn_cls " << r.losses.rpn_classification << " rpn_box "
    << r.losses.rpn_regression << " cls " << r.losses.classification << " box " << r.losses.regression << " rois "
    << r.losses.rois << " pos " << r.losses.positive_rois;
  return s.str();
}

std::string predictions_jsonl(const std::vector<ImageResult>& results) {
  std::string s;
  for (const ImageResult& r : results) {
    nlohmann::json j;
    j["image"] = r.id;
    j["boxes"] = nlohmann::json::array();
    j["scores"] = nlohmann::json::array();
    for (const ScoredBox& d : r.dets) {
      j["boxes"].push_back({d.box.x1, d.box.y1, d.box.x2, d.box.y2});
      j["scores"].push_back(d.score);
    }
    s += j.dump() + "\n";
  }
  return s;
}

std::string summary(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("undefined"); };
  std::ostringstream s;
  s << "TP " << r.counts.tp << " FP " << r.counts.fp << " TN " << r.counts.tn << " FN " << r.counts.fn
    << " sensitivity " << opt(r.rates.sensitivity) << " specificity " << opt(r.rates.specificity) << " accuracy "
    << opt(r.rates.accuracy) << " auc " << (r.roc ? format_double(r.roc->auc) : "undefined") << " froc_average "
    << (r.froc ? format_double(r.froc->average) : "undefined");
  return s.str();
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument("--seeds: not an unsigned integer: '" + item + "'");
    }
  }
  if (seeds.empty()) throw std::invalid_argument("--seeds: empty list");
  return seeds;
}

}  // namespace

int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage tumor detector on synthetic scans"};
  app.require_subcommand(1);

  DatasetSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--train", spec.n_train, "Training images")->check(CLI::PositiveNumber);
  gen->add_option("--test", spec.n_test, "Test images")->check(CLI::PositiveNumber);
  gen->add_option("--seed", spec.seed, "Generator seed");
  gen->add_option("--tumor-fraction", spec.tumor_fraction, "Fraction of images with a tumor")->check(CLI::Range(0.0, 1.0));

  std::string train_data, train_config, train_out;
  std::optional<int> train_iterations;
  std::optional<std::uint64_t> train_seed;
  auto* train = app.add_subcommand("train", "Train a detector");
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--config", train_config, "Config file (key = value lines)");
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--iterations", train_iterations, "Override the configured iteration count");
  train->add_option("--seed", train_seed, "Override the configured seed");

  std::string eval_data, eval_ckpt, eval_report, eval_roc, eval_froc, eval_predictions, eval_split = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
  eval->add_option("--report", eval_report, "Metrics report CSV")->required();
  eval->add_option("--roc", eval_roc, "ROC points CSV");
  eval->add_option("--froc", eval_froc, "FROC points CSV");
  eval->add_option("--predictions", eval_predictions, "Detections as JSON lines");
  eval->add_option("--split", eval_split, "Split to evaluate");

  std::string abl_data, abl_config, abl_out, abl_seeds = "7,8,9";
  std::optional<int> abl_iterations;
  auto* ablate = app.add_subcommand("ablate", "Component ablation table");
  ablate->add_option("--data", abl_data, "Dataset directory")->required();
  ablate->add_option("--config", abl_config, "Config file (key = value lines)");
  ablate->add_option("--out", abl_out, "Ablation table CSV")->required();
  ablate->add_option("--seeds", abl_seeds, "Comma-separated training seeds");
  ablate->add_option("--iterations", abl_iterations, "Override the configured iteration count");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) {
      generate_dataset(gen_out, spec);
      out << "wrote " << spec.n_train << " train and " << spec.n_test << " test images to " << gen_out << "\n";
    } else if (*train) {
      RunConfig cfg = load_config(train_config);
      if (train_iterations) cfg.iterations = *train_iterations;
      if (train_seed) cfg.seed = *train_seed;
      cfg.validate();
      const std::vector<LoadedImage> data = load_split(data_dir(train_data), "train");
      Detector model(cfg);
      const auto start = std::chrono::steady_clock::now();
      train_detector(model, data, [&](const TrainRecord& r) { out << log_line(r) << std::endl; });
      save_checkpoint(model, cfg.iterations, train_out);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      out << "saved " << train_out << " (config " << cfg.hash() << ", " << cfg.iterations << " iterations, " << secs
          << " s)\n";
    } else if (*eval) {
      const Checkpoint ckpt = load_checkpoint(eval_ckpt);
      const RunConfig cfg = ckpt.config();
      Detector model(cfg);
      restore_checkpoint(model, ckpt);
      const std::vector<LoadedImage> data = load_split(data_dir(eval_data), eval_split);
      const std::vector<ImageResult> results = predict(model, data);
      const MetricsReport report = evaluate(results, cfg.score_threshold, cfg.match_iou);
      write_file_atomic(eval_report, report_csv(report));
      if (!eval_roc.empty()) {
        if (!report.roc) throw MetricsError("ROC undefined: outcomes contain a single class");
        write_file_atomic(eval_roc, roc_csv(*report.roc));
      }
      if (!eval_froc.empty()) {
        if (!report.froc) throw MetricsError("FROC undefined: split has no lesions");
        write_file_atomic(eval_froc, froc_csv(*report.froc));
      }
      if (!eval_predictions.empty()) write_file_atomic(eval_predictions, predictions_jsonl(results));
      out << summary(report) << "\n";
    } else if (*ablate) {
      RunConfig cfg = load_config(abl_config);
      if (abl_iterations) cfg.iterations = *abl_iterations;
      cfg.validate();
      const std::vector<std::uint64_t> seeds = parse_seeds(abl_seeds);
      const fs::path dir = data_dir(abl_data);
      const std::vector<LoadedImage> train_set = load_split(dir, "train");
      const std::vector<LoadedImage> test_set = load_split(dir, "test");
      const std::vector<AblationRow> rows =
          run_ablation(cfg, train_set, test_set, seeds, [&](const AblationVariant& v, std::uint64_t seed, const MetricsReport& r) {
            out << v.name << " seed " << seed << ": " << summary(r) << std::endl;
          });
      write_file_atomic(abl_out, ablation_csv(rows));
      out << "wrote " << abl_out << "\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace tumordet
