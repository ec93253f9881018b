// One PASS/FAIL line per acceptance criterion. Exit status is non-zero if any fails.

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include "tumordet/cli.hpp"
#include "tumordet/dc_module.hpp"
#include "tumordet/fusion.hpp"
#include "tumordet/pyramid.hpp"
#include "tumordet/training.hpp"

#include <CLI11.hpp>
#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

namespace tumordet {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void run_cli(const std::vector<std::string>& args, std::ostream* log = nullptr) {
  std::ostringstream out, err;
  const int code = cli_run(args, log ? *log : out, err);
  if (code != 0) throw std::runtime_error(args.front() + " failed: " + err.str());
}

std::map<std::string, std::string> directory_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  return out;
}

std::map<std::string, std::string> report_values(const fs::path& csv) {
  std::map<std::string, std::string> values;
  std::istringstream in(read_file(csv));
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    values[line.substr(0, comma)] = line.substr(comma + 1);
  }
  return values;
}

double report_number(const std::map<std::string, std::string>& r, const std::string& key) {
  const auto it = r.find(key);
  if (it == r.end() || it->second == "undefined") return std::nan("");
  return std::stod(it->second);
}

Outcome gradient_suite(int argc, char** argv) {
  ::testing::GTEST_FLAG(filter) = "Seeds/GradientCheck.*";
  ::testing::InitGoogleTest(&argc, argv);
  auto& listeners = ::testing::UnitTest::GetInstance()->listeners();
  delete listeners.Release(listeners.default_result_printer());
  const auto start = Clock::now();
  const int status = RUN_ALL_TESTS();
  const double secs = seconds_since(start);
  const auto& unit = *::testing::UnitTest::GetInstance();
  std::set<std::string> ops;
  for (int i = 0; i < unit.total_test_suite_count(); ++i) {
    const auto& suite = *unit.GetTestSuite(i);
    for (int j = 0; j < suite.total_test_count(); ++j)
      if (suite.GetTestInfo(j)->should_run()) {
        const std::string name = suite.GetTestInfo(j)->name();
        ops.insert(name.substr(0, name.find('/')));
      }
  }
  const int seeds = unit.test_to_run_count() / std::max<int>(1, static_cast<int>(ops.size()));
  Outcome o;
  o.require(status == 0, std::to_string(unit.failed_test_count()) + " checks above 1e-4");
  o.require(seeds >= 20, "only " + std::to_string(seeds) + " seeds");
  o.require(secs < 120, "took " + fixed(secs, 1) + " s");
  o.detail = std::to_string(unit.successful_test_count()) + "/" + std::to_string(unit.test_to_run_count()) +
             " checks, " + std::to_string(ops.size()) + " ops x " + std::to_string(seeds) + " seeds, " +
             fixed(secs, 1) + " s" + (o.detail.empty() ? "" : " (" + o.detail + ")");
  return o;
}

Outcome level_table() {
  Outcome o;
  o.require(assign_level(224, 224).k == 4, "(224,224) != 4");
  o.require(assign_level(56, 56).k == 3, "(56,56) != 3");
  o.require(assign_level(1, 1).k == 3, "(1,1) != 3");
  Rng rng(1);
  std::uniform_real_distribution<double> logside(std::log(0.5), std::log(4096.0));
  std::vector<std::pair<double, int>> sweep;
  for (int i = 0; i < 10000; ++i) {
    const double w = std::exp(logside(rng)), h = std::exp(logside(rng));
    sweep.push_back({std::sqrt(w * h), assign_level(w, h).k});
  }
  std::sort(sweep.begin(), sweep.end());
  std::set<int> image;
  bool monotone = true;
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    image.insert(sweep[i].second);
    if (i > 0 && sweep[i - 1].second > sweep[i].second) monotone = false;
  }
  o.require(monotone, "not monotone in sqrt(wh)");
  o.require(image == std::set<int>{3, 4}, "image is not {3,4}");
  if (o.pass) o.detail = "table holds; 10^4 sweep monotone with image {3,4}";
  return o;
}

Outcome pyramid_shapes() {
  Rng rng(7);
  ParameterStore store;
  const BackboneConfig bc;
  Backbone backbone(bc, store, rng);
  TopDownPyramid fpn(bc.widths, 256, store, rng);
  AugmentedPath path(256, true, store, rng);
  Tape tape(false);
  const FeaturePyramid p =
      fpn.build_fpn(tape, backbone.extract_features(tape, tape.constant(testing::random_tensor({1, 256, 256}, rng, 0, 1))));
  const FeaturePyramid s = path.augment_pyramid(tape, p);
  Outcome o;
  for (int l = kMinLevel; l <= kMaxLevel; ++l) {
    const Shape want{256, Index{256} >> l, Index{256} >> l};
    o.require(p.level(l).shape() == want, "P" + std::to_string(l) + " is " + to_string(p.level(l).shape()));
    o.require(s.level(l).shape() == want, "S" + std::to_string(l) + " is " + to_string(s.level(l).shape()));
  }
  o.require(s.level(2).value().data() == p.level(2).value().data(), "S2 differs from P2");
  if (o.pass) o.detail = "P,S levels 256x{64,32,16,8}; S2 == P2 bitwise";
  return o;
}

Outcome dc_identities() {
  Outcome o;
  Rng rng(1);
  {
    ParameterStore store;
    DependenciesModule dc("dc", 512, 256, store, rng);
    const Tensor x = testing::random_tensor({512, 14, 14}, rng);
    Tape tape(false);
    DCTrace trace;
    Tensor small = x;
    small.data() *= 0.05;
    dc.forward(tape, tape.constant(small), &trace);
    const auto a = trace.attention.value().matrix(196, 196);
    const double row_err = (a.rowwise().sum().array() - 1.0).abs().maxCoeff();
    o.require(row_err <= 1e-9, "attention row sum error " + std::to_string(row_err));
    dc.w_z().value.data().setZero();
    Tape fresh(false);  // a tape snapshots each parameter on first use
    o.require(dc.forward(fresh, fresh.constant(x)).value().data() == x.data(), "W_z = 0 is not the identity");
  }
  {
    const Index c = 6, inner = 3, n = 25;
    Tape tape(false);
    const Var x = tape.constant(testing::random_tensor({c, 5, 5}, rng));
    const DCWeights w{tape.constant(Tensor({inner, c, 1, 1})), tape.constant(testing::random_tensor({inner, c, 1, 1}, rng)),
                      tape.constant(testing::random_tensor({inner, c, 1, 1}, rng)),
                      tape.constant(testing::random_tensor({c, inner, 1, 1}, rng))};
    DCTrace trace;
    dependencies_forward(x, w, &trace);
    const Eigen::VectorXd mean = trace.h.value().channels().rowwise().mean();
    double err = 0;
    for (Index j = 0; j < n; ++j) err = std::max(err, (trace.y.value().channels().col(j) - mean).cwiseAbs().maxCoeff());
    o.require(err <= 1e-12, "phi = 0 output deviates from mean(h) by " + std::to_string(err));
  }
  {
    const Index c = 8, inner = 4, n = 36;
    const Tensor xt = testing::random_tensor({c, 6, 6}, rng);
    const std::array<Tensor, 4> wt{testing::random_tensor({inner, c, 1, 1}, rng), testing::random_tensor({inner, c, 1, 1}, rng),
                                   testing::random_tensor({inner, c, 1, 1}, rng), testing::random_tensor({c, inner, 1, 1}, rng)};
    double err = 0;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Index> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), Index{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      Tensor xp = xt;
      for (Index j = 0; j < n; ++j) xp.channels().col(j) = xt.channels().col(perm[static_cast<std::size_t>(j)]);
      Tape tape(false);
      const DCWeights w{tape.constant(wt[0]), tape.constant(wt[1]), tape.constant(wt[2]), tape.constant(wt[3])};
      const Tensor z = dependencies_forward(tape.constant(xt), w).value();
      const Tensor zp = dependencies_forward(tape.constant(xp), w).value();
      for (Index j = 0; j < n; ++j)
        err = std::max(err, (zp.channels().col(j) - z.channels().col(perm[static_cast<std::size_t>(j)])).cwiseAbs().maxCoeff());
    }
    o.require(err <= 1e-12, "permutation equivariance error " + std::to_string(err));
  }
  if (o.pass) o.detail = "W_z=0 identity, phi=0 mean, row sums, permutation equivariance";
  return o;
}

Outcome metrics_oracles() {
  Outcome o;
  Rng rng(1);
  std::uniform_int_distribution<int> pos(0, 40), ext(1, 25);
  double iou_err = 0;
  for (int i = 0; i < 10000; ++i) {
    const int ax = pos(rng), ay = pos(rng), bx = pos(rng), by = pos(rng);
    const BasicBox<int> a{ax, ay, ax + ext(rng), ay + ext(rng)}, b{bx, by, bx + ext(rng), by + ext(rng)};
    iou_err = std::max(iou_err, std::abs(iou(a.cast<double>(), b.cast<double>()) - testing::raster_iou(a, b)));
  }
  o.require(iou_err <= 1e-9, "IOU vs raster error " + std::to_string(iou_err));

  std::uniform_int_distribution<int> size(2, 30), level(0, 6);
  std::bernoulli_distribution coin(0.5);
  double auc_err = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<ScoredOutcome> outs;
    const int n = size(rng);
    for (int i = 0; i < n; ++i) outs.push_back({level(rng) / 6.0, coin(rng)});
    outs.push_back({level(rng) / 6.0, true});
    outs.push_back({level(rng) / 6.0, false});
    auc_err = std::max(auc_err, std::abs(roc_auc(outs).auc - testing::pairwise_auc(outs)));
  }
  o.require(auc_err <= 1e-9, "AUC vs pairwise error " + std::to_string(auc_err));

  const double avg = froc_average(std::vector<double>{0.671, 0.804, 0.907, 0.963, 0.977, 0.986, 0.998});
  o.require(std::abs(avg - 0.901) <= 0.0005, "FROC average " + fixed(avg));
  o.detail = "IOU err " + std::to_string(iou_err) + ", AUC err " + std::to_string(auc_err) + ", FROC avg " + fixed(avg) +
             (o.detail.empty() ? "" : " (" + o.detail + ")");
  return o;
}

Outcome end_to_end(const fs::path& work, const std::string& config) {
  const fs::path data = work / "e2e-data";
  run_cli({"gen-data", "--out", data.string(), "--train", "200", "--test", "60", "--seed", "7"});
  const auto start = Clock::now();
  std::ofstream log(work / "e2e-train.log");
  run_cli({"train", "--data", data.string(), "--config", config, "--out", (work / "e2e.ckpt").string(), "--iterations",
           "6000"},
          &log);
  const double train_secs = seconds_since(start);
  run_cli({"eval", "--data", data.string(), "--ckpt", (work / "e2e.ckpt").string(), "--report",
           (work / "e2e-report.csv").string(), "--roc", (work / "e2e-roc.csv").string(), "--froc",
           (work / "e2e-froc.csv").string()});
  const double secs = seconds_since(start);
  const auto r = report_values(work / "e2e-report.csv");
  const double auc = report_number(r, "auc"), sens = report_number(r, "sensitivity");
  Outcome o;
  o.require(auc >= 0.85, "AUC below 0.85");
  o.require(sens >= 0.80, "sensitivity below 0.80");
  o.require(secs <= 1800, "over 30 minutes");
  o.detail = "AUC " + fixed(auc) + ", sensitivity " + fixed(sens) + ", train " + fixed(train_secs / 60, 1) +
             " min, train+eval " + fixed(secs / 60, 1) + " min" + (o.detail.empty() ? "" : " (" + o.detail + ")");
  return o;
}

Outcome ablation(const fs::path& work, const std::string& config, int iterations) {
  const fs::path data = work / "e2e-data";
  const std::vector<LoadedImage> train = load_split(data, "train"), test = load_split(data, "test");
  RunConfig base = RunConfig::load(config);
  base.iterations = iterations;
  const auto& variants = ablation_variants();
  const AblationVariant& none = variants.front();
  const AblationVariant& all = variants.back();
  int wins = 0;
  std::string per_seed;
  const std::vector<std::uint64_t> seeds{7, 8, 9};
  for (std::uint64_t seed : seeds) {
    const double acc_none = *train_and_evaluate(variant_config(base, none, seed), train, test).rates.accuracy;
    const double acc_all = *train_and_evaluate(variant_config(base, all, seed), train, test).rates.accuracy;
    wins += acc_all >= acc_none;
    per_seed += (per_seed.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + " all " + fixed(acc_all, 3) +
                " vs none " + fixed(acc_none, 3);
  }
  Outcome o;
  o.require(2 * wins > static_cast<int>(seeds.size()), "full configuration wins only " + std::to_string(wins) + "/3");
  o.detail = per_seed + " at " + std::to_string(iterations) + " iterations" + (o.detail.empty() ? "" : " (" + o.detail + ")");
  return o;
}

Outcome determinism(const fs::path& work, const std::string& config) {
  Outcome o;
  std::array<fs::path, 2> runs{work / "det-a", work / "det-b"};
  for (const fs::path& r : runs) {
    fs::create_directories(r);
    run_cli({"gen-data", "--out", (r / "data").string(), "--train", "12", "--test", "6", "--seed", "7"});
    run_cli({"train", "--data", (r / "data").string(), "--config", config, "--out", (r / "model.ckpt").string(),
             "--iterations", "40"});
    run_cli({"eval", "--data", (r / "data").string(), "--ckpt", (r / "model.ckpt").string(), "--report",
             (r / "report.csv").string(), "--predictions", (r / "predictions.jsonl").string()});
  }
  o.require(directory_bytes(runs[0] / "data") == directory_bytes(runs[1] / "data"), "datasets differ");
  for (const char* f : {"model.ckpt", "report.csv", "predictions.jsonl"})
    o.require(read_file(runs[0] / f) == read_file(runs[1] / f), std::string(f) + " differs");
  if (o.pass) o.detail = "dataset, checkpoint, report and predictions bit-identical across two runs";
  return o;
}

}  // namespace
}  // namespace tumordet

int main(int argc, char** argv) {
  using namespace tumordet;
  CLI::App app{"Acceptance checks"};
  std::string config = TUMORDET_SOURCE_DIR "/configs/desk.cfg";
  std::string work_arg;
  int ablation_iterations = 1500;
  bool quick = false;
  app.add_option("--config", config, "Desk-scale config for the training criteria");
  app.add_option("--work", work_arg, "Keep artifacts in this directory");
  app.add_option("--ablation-iterations", ablation_iterations, "Training iterations per ablation run");
  app.add_flag("--quick", quick, "Skip the training criteria");
  app.allow_extras();
  CLI11_PARSE(app, argc, argv);

  std::unique_ptr<tumordet::testing::ScratchDir> scratch;
  fs::path work;
  if (work_arg.empty()) {
    scratch = std::make_unique<tumordet::testing::ScratchDir>("acceptance");
    work = scratch->path;
  } else {
    work = work_arg;
    fs::create_directories(work);
  }

  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-suite", [&] { return gradient_suite(argc, argv); }},
      {"level-table", level_table},
      {"pyramid-shapes", pyramid_shapes},
      {"dc-identities", dc_identities},
      {"metrics-oracles", metrics_oracles},
  };
  if (!quick) {
    criteria.push_back({"end-to-end", [&] { return end_to_end(work, config); }});
    criteria.push_back({"ablation", [&] { return ablation(work, config, ablation_iterations); }});
    criteria.push_back({"determinism", [&] { return determinism(work, config); }});
  }

  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
