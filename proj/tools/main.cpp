// gradapprox command-line front end: training runs, kernel benchmarks,
// finite-difference gradient checks, and schedule inspection.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradapprox/bench.hpp"
#include "gradapprox/blas.hpp"
#include "gradapprox/gradcheck.hpp"
#include "gradapprox/schedule.hpp"
#include "gradapprox/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

std::string default_data_dir() {
  const char *env = std::getenv("GRADAPPROX_DATA_DIR");
  return env ? env : "";
}

char method_char(gradapprox::ApproxMethod::Kind k) {
  switch (k) {
    case gradapprox::ApproxMethod::Kind::Full: return '.';
    case gradapprox::ApproxMethod::Kind::Zero: return 'Z';
    case gradapprox::ApproxMethod::Kind::Random: return 'R';
    case gradapprox::ApproxMethod::Kind::TopK: return 'T';
  }
  return '?';
}

int cmd_train(const gradapprox::TrainConfig &cfg, const std::string &baseline_path) {
  using nlohmann::json;
  gradapprox::TrainResult res = gradapprox::run_training(cfg);

  json summary = res.manifest;
  summary["results"] = {{"best_val_accuracy", res.best_val_accuracy},
                        {"total_seconds", res.total_seconds},
                        {"final_train_loss",
                         res.epochs.empty() ? 0.0 : res.epochs.back().train_loss}};
  if (!cfg.manifest_out.empty()) {
    std::ofstream mf(cfg.manifest_out);
    mf << summary.dump(2) << "\n";
  }

  std::printf("model=%s method=%s schedule=%s approximated_layers=%d\n",
              cfg.model.c_str(), cfg.method.c_str(),
              cfg.schedule.empty() ? "none" : cfg.schedule.c_str(), res.approximated_layers);
  std::printf("best_val_accuracy=%.4f total_seconds=%.1f\n", res.best_val_accuracy,
              res.total_seconds);

  if (!baseline_path.empty()) {
    std::ifstream bf(baseline_path);
    if (!bf) throw gradapprox::DataError("cannot open baseline manifest " + baseline_path);
    json base = json::parse(bf);
    if (!base.contains("results"))
      throw gradapprox::DataError("baseline manifest " + baseline_path +
                                  " has no results section (run it to completion first)");
    const double d = res.best_val_accuracy - base["results"]["best_val_accuracy"].get<double>();
    const double sp = base["results"]["total_seconds"].get<double>() /
                      std::max(res.total_seconds, 1e-9);
    std::printf("vs_baseline accuracy_delta=%+.4f speedup=%.3fx\n", d, sp);
  }
  return kExitOk;
}

int cmd_bench(std::vector<std::string> case_specs, int iters, int warmup,
              std::uint64_t seed, const std::string &out_path) {
  std::vector<gradapprox::BenchCase> cases;
  if (case_specs.empty())
    case_specs = {"128,64,8,8,64,3", "128,64,16,16,64,3", "128,64,32,32,64,3",
                  "128,16,32,32,16,3", "128,32,16,16,64,5"};
  for (const auto &spec : case_specs) {
    gradapprox::BenchCase bc;
    char comma;
    std::istringstream ss(spec);
    if (!(ss >> bc.n >> comma >> bc.ci >> comma >> bc.h >> comma >> bc.w >> comma >> bc.co >>
          comma >> bc.k) || !ss.eof())
      throw CLI::ValidationError("--case expects n,ci,h,w,co,k, got: " + spec);
    bc.iters = iters;
    bc.warmup = warmup;
    cases.push_back(bc);
  }

  std::ostringstream csv;
  auto rows = gradapprox::sweep(cases, seed, csv);
  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(out_path);
    if (!out) throw gradapprox::DataError("cannot write " + out_path);
    out << csv.str();
    std::cout << csv.str();
  }
  for (const auto &row : rows)
    if (!row.error.empty()) {
      std::cerr << "bench case failed: " << row.error << "\n";
      return kExitCheck;
    }
  return kExitOk;
}

template <typename T>
int run_checks(double tol, bool inject_fault) {
  const auto res = gradapprox::run_gradcheck<T>(tol, inject_fault);
  for (const auto &e : res.entries)
    std::printf("%-28s max_rel_err=%.3e  %s\n", e.name.c_str(), e.max_rel_err,
                e.pass ? "ok" : "FAIL");
  std::printf("gradcheck %s (tolerance %.1e, %zu checks)\n", res.ok ? "passed" : "FAILED", tol,
              res.entries.size());
  return res.ok ? kExitOk : kExitCheck;
}

int cmd_schedule(const std::string &builtin, const std::string &file, int layers,
                 const std::string &method, int topk) {
  using namespace gradapprox;
  const ApproxMethod m = ApproxMethod{parse_method_kind(method), 1.0 / 128, topk, 1.0 / 128};
  Schedule s(1, layers);
  if (!builtin.empty()) {
    s = builtin_schedule(builtin, layers, m);
  } else if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open schedule file " + file);
    std::stringstream ss;
    ss << in.rdbuf();
    s = parse_schedule(ss.str(), layers);
  }

  std::printf("period %d, %d layers\n", s.period, s.num_layers);
  std::printf("      ");
  for (int p = 0; p < s.period; ++p) std::printf("%d", p % 10);
  std::printf("\n");
  for (int l = 0; l < s.num_layers; ++l) {
    std::printf("L%-4d ", l);
    for (int p = 0; p < s.period; ++p) std::putchar(method_char(s.cell(l, p).kind));
    std::printf("\n");
  }
  std::printf("approx_fraction=%.6g\n", approx_fraction(s));
  return kExitOk;
}

}  // namespace

int main(int argc, char **argv) {
  gradapprox::blas_init(argv);
  CLI::App app{"CNN training with filter-gradient approximation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", gradapprox::kVersion);

  gradapprox::TrainConfig cfg;
  cfg.data_dir = default_data_dir();
  std::string baseline;
  auto *train = app.add_subcommand("train", "run a training experiment");
  train->add_option("--model", cfg.model, "cnn2 | resnet20 | resnet14 | vgg19");
  train->add_option("--method", cfg.method, "method for scheduled cells: full|zero|random|topk");
  train->add_option("--schedule", cfg.schedule, "built-in name (schedule1..3) or grid file");
  train->add_option("--epochs", cfg.epochs);
  train->add_option("--batch-size", cfg.batch_size);
  train->add_option("--seed", cfg.seed);
  train->add_option("--topk", cfg.topk, "k for the topk method");
  train->add_option("--dataset", cfg.dataset, "cifar10 | mnist | synthetic");
  train->add_option("--data-dir", cfg.data_dir, "dataset directory (env GRADAPPROX_DATA_DIR)");
  train->add_option("--subset", cfg.subset, "train on a random subset of this size");
  train->add_option("--val-subset", cfg.val_subset, "validate on the first N test images");
  train->add_option("--synthetic-train", cfg.synthetic_train);
  train->add_option("--synthetic-test", cfg.synthetic_test);
  train->add_flag("--augment,!--no-augment", cfg.augment, "random crop and flip");
  train->add_option("--metrics-out", cfg.metrics_out, "per-epoch CSV path");
  train->add_option("--manifest-out", cfg.manifest_out, "run manifest JSON path");
  train->add_option("--checkpoint-out", cfg.checkpoint_out, "checkpoint path prefix");
  train->add_option("--baseline", baseline, "manifest of a prior run for delta reporting");

  std::vector<std::string> case_specs;
  int iters = 15, warmup = 3;
  std::uint64_t bench_seed = 0;
  std::string bench_out;
  auto *bench = app.add_subcommand("bench", "dense vs approx filter-gradient timings");
  bench->add_option("--case", case_specs, "shape as n,ci,h,w,co,k (repeatable)");
  bench->add_option("--iters", iters, "timed iterations per case (median reported)");
  bench->add_option("--warmup", warmup, "discarded warmup iterations");
  bench->add_option("--seed", bench_seed);
  bench->add_option("--out", bench_out, "CSV output path (default stdout)");

  bool f64 = false, inject_fault = false;
  double tol = 0;
  auto *gradcheck = app.add_subcommand("gradcheck", "finite-difference layer checks");
  gradcheck->add_flag("--f64", f64, "check at 64-bit (tolerance 1e-6)");
  gradcheck->add_option("--tol", tol, "override tolerance");
  gradcheck->add_flag("--inject-fault", inject_fault)->group("");  // test hook

  std::string sched_builtin, sched_file, sched_method = "topk";
  int sched_layers = 18, sched_topk = 1;
  auto *schedule = app.add_subcommand("schedule", "print a schedule grid and its fraction");
  schedule->add_option("--builtin", sched_builtin, "schedule1 | schedule2 | schedule3");
  schedule->add_option("--file", sched_file, "schedule grid file to validate and print");
  schedule->add_option("--layers", sched_layers, "number of schedulable layers");
  schedule->add_option("--method", sched_method, "method for built-in cells");
  schedule->add_option("--topk", sched_topk);

  try {
    app.parse(argc, argv);
    if (train->parsed()) return cmd_train(cfg, baseline);
    if (bench->parsed()) return cmd_bench(case_specs, iters, warmup, bench_seed, bench_out);
    if (gradcheck->parsed()) {
      if (tol == 0) tol = f64 ? 1e-6 : 1e-3;
      return f64 ? run_checks<double>(tol, inject_fault) : run_checks<float>(tol, inject_fault);
    }
    if (schedule->parsed())
      return cmd_schedule(sched_builtin, sched_file, sched_layers, sched_method, sched_topk);
    return kExitUsage;
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const gradapprox::ScheduleParseError &e) {
    std::cerr << "schedule error: " << e.what() << "\n";
    return kExitData;
  } catch (const gradapprox::DataError &e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const gradapprox::TrainingError &e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kExitCheck;
  } catch (const std::invalid_argument &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
