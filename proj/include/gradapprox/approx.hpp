#pragma once

#include <atomic>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include "gradapprox/kernels.hpp"
#include "gradapprox/tensor.hpp"

namespace gradapprox {

// What to do with one conv layer's filter gradient on one batch.
struct ApproxMethod {
  enum class Kind { Full, Zero, Random, TopK };
  Kind kind = Kind::Full;
  double sigma = 1.0 / 128;  // Random: std deviation, default 1/batch_size
  int k = 1;                 // TopK: entries kept per (n, co) plane
  double scale = 1.0 / 128;  // TopK: final scalar, default 1/batch_size

  static ApproxMethod full() { return {}; }
  static ApproxMethod zero() { return {Kind::Zero}; }
  static ApproxMethod random(double sigma) {
    if (sigma <= 0) throw std::invalid_argument("random method: sigma must be > 0");
    return {Kind::Random, sigma};
  }
  static ApproxMethod topk(int k, double scale) {
    if (k < 1) throw std::invalid_argument("topk method: k must be >= 1");
    if (scale <= 0) throw std::invalid_argument("topk method: scale must be > 0");
    return {Kind::TopK, 1.0 / 128, k, scale};
  }

  bool is_full() const { return kind == Kind::Full; }
};

inline const char *to_string(ApproxMethod::Kind k) {
  switch (k) {
    case ApproxMethod::Kind::Full: return "full";
    case ApproxMethod::Kind::Zero: return "zero";
    case ApproxMethod::Kind::Random: return "random";
    default: return "topk";
  }
}

inline ApproxMethod::Kind parse_method_kind(const std::string &s) {
  if (s == "full") return ApproxMethod::Kind::Full;
  if (s == "zero") return ApproxMethod::Kind::Zero;
  if (s == "random") return ApproxMethod::Kind::Random;
  if (s == "topk") return ApproxMethod::Kind::TopK;
  throw std::invalid_argument("unknown approximation method: " + s);
}

// Builds a method of the given kind with sigma and scale tied to the batch
// size (1/batch, e.g. 1/128 at the default batch size).
inline ApproxMethod method_for_batch(ApproxMethod::Kind kind, int batch_size, int k = 1) {
  switch (kind) {
    case ApproxMethod::Kind::Full: return ApproxMethod::full();
    case ApproxMethod::Kind::Zero: return ApproxMethod::zero();
    case ApproxMethod::Kind::Random: return ApproxMethod::random(1.0 / batch_size);
    default: return ApproxMethod::topk(k, 1.0 / batch_size);
  }
}

// Deterministic stream: the same (seed, layer, step) always reproduces the
// same draws, distinct ids give independent streams.
struct RngStream {
  std::uint64_t seed = 0;
  int layer = 0;
  long step = 0;

  std::mt19937_64 engine() const {
    auto mix = [](std::uint64_t x) {
      x += 0x9e3779b97f4a7c15ULL;
      x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
      x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
      return x ^ (x >> 31);
    };
    std::uint64_t s = mix(seed);
    s = mix(s ^ (static_cast<std::uint64_t>(layer) * 0xd6e8feb86659fd93ULL));
    s = mix(s ^ (static_cast<std::uint64_t>(step) + 0x2545f4914f6cdd1dULL));
    return std::mt19937_64(s);
  }
};

// Per-method invocation counters, used by schedule-routing tests and to make
// stride fallbacks observable.
struct KernelStats {
  std::atomic<long> full_calls{0}, zero_calls{0}, random_calls{0}, topk_calls{0};
  std::atomic<long> topk_stride_fallbacks{0};

  void reset() {
    full_calls = zero_calls = random_calls = topk_calls = 0;
    topk_stride_fallbacks = 0;
  }
  static KernelStats &instance() {
    static KernelStats s;
    return s;
  }
};

template <typename T>
FilterTensor<T> random_filter_grad(int k, int ci, int co, double sigma, const RngStream &rng) {
  if (sigma <= 0) throw std::invalid_argument("random_filter_grad: sigma must be > 0");
  FilterTensor<T> df(k, ci, co, FilterLayout::KKCiCo);
  auto eng = rng.engine();
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto &v : df.data) v = static_cast<T>(dist(eng));
  return df;
}

struct FilterShape {
  int k = 0, ci = 0, co = 0;
};

template <typename T>
FilterTensor<T> compute_filter_grad(const ApproxMethod &method, const Tensor4<T> &in,
                                    const Tensor4<T> &dout, const FilterShape &shape,
                                    const ConvGeometry &g, const RngStream &rng) {
  auto &stats = KernelStats::instance();
  switch (method.kind) {
    case ApproxMethod::Kind::Zero:
      ++stats.zero_calls;
      return FilterTensor<T>(shape.k, shape.ci, shape.co, FilterLayout::KKCiCo);
    case ApproxMethod::Kind::Random:
      ++stats.random_calls;
      return random_filter_grad<T>(shape.k, shape.ci, shape.co, method.sigma, rng);
    case ApproxMethod::Kind::TopK: {
      if (g.stride != 1) {
        // Patch extraction assumes unit stride; fall back to the exact path.
        ++stats.topk_stride_fallbacks;
        ++stats.full_calls;
        return conv2d_filter_grad_dense(in, dout, shape.k, g);
      }
      ++stats.topk_calls;
      Tensor4<T> nhwc = transpose_activations(in, Layout::NHWC);
      FilterTensor<T> df =
          approx_filter_grad_topk(nhwc, dout, shape.k, g.pad, method.k);
      for (auto &v : df.data) v *= static_cast<T>(method.scale);
      return transpose_filter(df, FilterLayout::KKCiCo);
    }
    default:
      ++stats.full_calls;
      return conv2d_filter_grad_dense(in, dout, shape.k, g);
  }
}

}  // namespace gradapprox
