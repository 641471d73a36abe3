#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradapprox/data.hpp"
#include "gradapprox/model.hpp"
#include "gradapprox/optimizer.hpp"
#include "gradapprox/schedule.hpp"

namespace gradapprox {

inline constexpr const char *kVersion = "gradapprox 0.1.0";

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string model = "cnn2";
  int batch_size = 128;
  int epochs = 1;
  std::uint64_t seed = 0;
  std::string schedule;        // built-in name, file path, or empty for all-full
  std::string method = "full"; // method placed in the schedule's non-full cells
  int topk = 1;
  bool augment = true;
  std::string dataset = "cifar10";  // cifar10 | mnist | synthetic
  std::string data_dir;
  int subset = 0;      // train subset size, 0 = all
  int val_subset = 0;  // validation subset size, 0 = all
  int synthetic_train = 6000, synthetic_test = 1000;
  std::string metrics_out, manifest_out, checkpoint_out;
  AdamConfig adam;
};

// Pad-4 zero border, random 32x32 (original-size) crop, horizontal flip with
// probability 1/2; per-image randomness drawn from the supplied engine.
inline Tensor4<float> augment(const Tensor4<float> &batch, std::mt19937_64 &rng) {
  constexpr int pad = 4;
  Tensor4<float> out(batch.n, batch.c, batch.h, batch.w, Layout::NCHW);
  std::uniform_int_distribution<int> off(0, 2 * pad);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int i = 0; i < batch.n; ++i) {
    const int dr = off(rng) - pad, dc = off(rng) - pad;
    const bool flip = coin(rng) == 1;
    for (int j = 0; j < batch.c; ++j)
      for (int r = 0; r < batch.h; ++r)
        for (int c = 0; c < batch.w; ++c) {
          const int sr = r + dr;
          const int sc = (flip ? batch.w - 1 - c : c) + dc;
          out.at(i, j, r, c) = (sr >= 0 && sr < batch.h && sc >= 0 && sc < batch.w)
                                   ? batch.at(i, j, sr, sc)
                                   : 0.0f;
        }
  }
  return out;
}

// Resolves a schedule cell against the configured batch size (sigma and
// scale default to 1/batch_size).
inline ApproxMethod resolve_method(const ApproxMethod &cell, int batch_size) {
  if (cell.is_full()) return cell;
  return method_for_batch(cell.kind, batch_size, cell.k);
}

// One training step: forward, backward with schedule-routed filter
// gradients, one Adam update. Returns the batch loss.
template <typename T>
T train_step(Network<T> &net, const Tensor4<T> &images, const std::vector<int> &labels,
             const Schedule &schedule, long step, Adam<T> &opt, int epoch,
             std::uint64_t seed) {
  auto sched_convs = net.schedulable_convs();
  if (static_cast<int>(sched_convs.size()) != schedule.num_layers)
    throw std::invalid_argument("schedule covers " + std::to_string(schedule.num_layers) +
                                " layers but model has " +
                                std::to_string(sched_convs.size()) + " schedulable convs");
  for (std::size_t l = 0; l < sched_convs.size(); ++l) {
    const ApproxMethod m = resolve_method(method_for(schedule, static_cast<int>(l), step),
                                          images.n);
    sched_convs[l]->set_method(m, RngStream{seed, static_cast<int>(l), step});
  }
  Tensor4<T> logits = net.forward(images, /*train=*/true);
  LossResult<T> loss = softmax_cross_entropy(logits, labels);
  if (!std::isfinite(static_cast<double>(loss.loss)))
    throw TrainingError("non-finite loss at step " + std::to_string(step) +
                        " (epoch " + std::to_string(epoch) + ")");
  net.backward(loss.dlogits);
  auto params = net.params();
  opt.step(params, epoch);
  return loss.loss;
}

template <typename T>
double evaluate(Network<T> &net, const Dataset &d, int subset = 0, int batch = 256) {
  const int n = subset > 0 ? std::min(subset, d.count()) : d.count();
  int correct = 0;
  for (int start = 0; start < n; start += batch) {
    const int bn = std::min(batch, n - start);
    std::vector<int> idx(bn);
    std::iota(idx.begin(), idx.end(), start);
    auto [images, labels] = gather(d, idx);
    Tensor4<T> logits = net.forward(images, /*train=*/false);
    for (int i = 0; i < bn; ++i) {
      int best = 0;
      for (int j = 1; j < net.classes; ++j)
        if (logits.at(i, j, 0, 0) > logits.at(i, best, 0, 0)) best = j;
      if (best == labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / n;
}

inline Schedule make_schedule(const TrainConfig &cfg, int num_schedulable) {
  if (cfg.schedule.empty() || cfg.schedule == "none") {
    return Schedule(1, num_schedulable);
  }
  const ApproxMethod m =
      method_for_batch(parse_method_kind(cfg.method), cfg.batch_size, cfg.topk);
  if (is_builtin_schedule(cfg.schedule))
    return builtin_schedule(cfg.schedule, num_schedulable, m);
  std::ifstream in(cfg.schedule);
  if (!in) throw DataError("cannot open schedule file " + cfg.schedule);
  std::stringstream ss;
  ss << in.rdbuf();
  Schedule s = parse_schedule(ss.str(), num_schedulable);
  for (auto &cell : s.grid)
    if (!cell.is_full()) cell = method_for_batch(cell.kind, cfg.batch_size, cfg.topk);
  return s;
}

inline int approximated_layer_count(const Schedule &s) {
  int count = 0;
  for (int l = 0; l < s.num_layers; ++l) {
    bool any = false;
    for (int p = 0; p < s.period; ++p)
      if (!s.cell(l, p).is_full()) any = true;
    if (any) ++count;
  }
  return count;
}

template <typename T>
void save_checkpoint(const std::string &prefix, const std::vector<ParamRef<T>> &params) {
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  std::ofstream man(prefix + ".manifest");
  if (!bin || !man) throw DataError("cannot write checkpoint " + prefix);
  std::size_t offset = 0;
  for (const auto &p : params) {
    bin.write(reinterpret_cast<const char *>(p.value->data()), p.value->size() * sizeof(T));
    man << p.name << " " << p.value->size() << " " << offset << "\n";
    offset += p.value->size() * sizeof(T);
  }
}

template <typename T>
void load_checkpoint(const std::string &prefix, const std::vector<ParamRef<T>> &params) {
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  std::ifstream man(prefix + ".manifest");
  if (!bin || !man) throw DataError("cannot read checkpoint " + prefix);
  for (const auto &p : params) {
    std::string name;
    std::size_t len, offset;
    if (!(man >> name >> len >> offset) || name != p.name || len != p.value->size())
      throw DataError("checkpoint manifest does not match model at parameter " + p.name);
    bin.seekg(static_cast<std::streamoff>(offset));
    if (!bin.read(reinterpret_cast<char *>(p.value->data()), len * sizeof(T)))
      throw DataError("checkpoint payload truncated at parameter " + p.name);
  }
}

struct EpochMetrics {
  int epoch;
  long step;
  double train_loss;
  double val_accuracy;
  double wall_seconds;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::vector<double> step_losses;
  double best_val_accuracy = 0;
  double total_seconds = 0;
  int approximated_layers = 0;
  nlohmann::json manifest;
};

inline nlohmann::json make_manifest(const TrainConfig &cfg, const Schedule &schedule,
                                    int num_schedulable) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["model"] = cfg.model;
  j["dataset"] = cfg.dataset;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  j["method"] = cfg.method;
  j["topk"] = cfg.topk;
  j["augment"] = cfg.augment;
  j["subset"] = cfg.subset;
  j["schedulable_layers"] = num_schedulable;
  j["approximated_layers"] = approximated_layer_count(schedule);
  j["approx_fraction"] = approx_fraction(schedule);
  j["schedule"] = emit_schedule(schedule);
  j["adam"] = {{"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2},
               {"eps", cfg.adam.eps},     {"lr0", cfg.adam.lr0},
               {"decay_per_epoch", cfg.adam.decay}};
  return j;
}

inline void write_metrics_csv(const std::string &path, const nlohmann::json &manifest,
                              const std::vector<EpochMetrics> &rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metrics file " + path);
  out << "# " << manifest["version"].get<std::string>() << " model=" << manifest["model"].get<std::string>()
      << " method=" << manifest["method"].get<std::string>() << " seed=" << manifest["seed"]
      << " batch_size=" << manifest["batch_size"] << " lr0=" << manifest["adam"]["lr0"]
      << " decay=" << manifest["adam"]["decay_per_epoch"] << " beta1=" << manifest["adam"]["beta1"]
      << " beta2=" << manifest["adam"]["beta2"] << " eps=" << manifest["adam"]["eps"] << "\n";
  out << "epoch,step,train_loss,val_accuracy,wall_seconds\n";
  char buf[160];
  for (const auto &r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%ld,%.9g,%.9g,%.3f\n", r.epoch, r.step,
                  r.train_loss, r.val_accuracy, r.wall_seconds);
    out << buf;
  }
}

inline std::pair<Dataset, Dataset> load_dataset(const TrainConfig &cfg) {
  if (cfg.dataset == "cifar10") return load_cifar10(cfg.data_dir);
  if (cfg.dataset == "mnist") return load_mnist(cfg.data_dir);
  if (cfg.dataset == "synthetic")
    return make_synthetic_cifar(cfg.synthetic_train, cfg.synthetic_test, cfg.seed);
  throw DataError("unknown dataset: " + cfg.dataset);
}

// Full training run: manifest first, then epochs of schedule-routed steps,
// per-epoch validation, metrics rows.
inline TrainResult run_training(const TrainConfig &cfg, const Dataset &train,
                                const Dataset &test) {
  Network<float> net = build_model<float>(cfg.model, cfg.seed, train.images.c, train.images.h);
  const int num_sched = static_cast<int>(net.schedulable_convs().size());
  const Schedule schedule = make_schedule(cfg, num_sched);

  TrainResult res;
  res.approximated_layers = approximated_layer_count(schedule);
  res.manifest = make_manifest(cfg, schedule, num_sched);
  if (!cfg.manifest_out.empty()) {
    std::ofstream mf(cfg.manifest_out);
    if (!mf) throw DataError("cannot write manifest " + cfg.manifest_out);
    mf << res.manifest.dump(2) << "\n";
  }

  Adam<float> opt(cfg.adam);
  auto params = net.params();
  opt.init(params);

  Batcher batcher(train.count(), cfg.batch_size, cfg.seed, cfg.subset);
  const auto t0 = std::chrono::steady_clock::now();
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    batcher.shuffle_epoch(epoch);
    double loss_sum = 0;
    for (int b = 0; b < batcher.num_batches(); ++b) {
      auto [images, labels] = gather(train, batcher.batch_indices(b));
      if (cfg.augment) {
        auto rng = RngStream{cfg.seed ^ 0x45d9f3b3335b369dULL, epoch, b}.engine();
        images = augment(images, rng);
      }
      const float loss = train_step(net, images, labels, schedule, step, opt, epoch, cfg.seed);
      res.step_losses.push_back(loss);
      loss_sum += loss;
      ++step;
    }
    const double val = evaluate(net, test, cfg.val_subset);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.epochs.push_back({epoch, step, loss_sum / batcher.num_batches(), val, wall});
    res.best_val_accuracy = std::max(res.best_val_accuracy, val);
    if (!cfg.metrics_out.empty()) write_metrics_csv(cfg.metrics_out, res.manifest, res.epochs);
  }
  res.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!cfg.checkpoint_out.empty()) save_checkpoint(cfg.checkpoint_out, params);
  return res;
}

inline TrainResult run_training(const TrainConfig &cfg) {
  auto [train, test] = load_dataset(cfg);
  return run_training(cfg, train, test);
}

}  // namespace gradapprox
