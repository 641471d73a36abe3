#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradapprox/kernels.hpp"
#include "gradapprox/tensor.hpp"

namespace gradapprox {

struct BenchCase {
  int n = 0, ci = 0, h = 0, w = 0, co = 0, k = 0;
  int iters = 15;
  int warmup = 3;
};

struct BenchResult {
  double dense_us = 0;
  double approx_kernel_us = 0;
  double transpose_us = 0;  // activation NCHW->NHWC plus filter CoKKCi->KKCiCo
  double approx_total_us = 0;
  double speedup = 0;
};

namespace detail {

template <typename F>
double median_time_us(int iters, int warmup, F &&body) {
  std::vector<double> samples;
  samples.reserve(iters);
  for (int i = 0; i < warmup + iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    const double us =
        std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
    if (i >= warmup) samples.push_back(us);
  }
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

}  // namespace detail

// Times the same code paths training uses: dense filter gradient vs the
// sparse kernel with its two layout transposes accounted separately. Before
// timing, the approx kernel is checked once against a 64-bit dense oracle on
// the sparsified output gradient.
inline BenchResult run_bench(const BenchCase &bc, std::uint64_t seed) {
  if (bc.n < 1 || bc.ci < 1 || bc.h < 1 || bc.w < 1 || bc.co < 1 || bc.k < 1)
    throw std::invalid_argument("bench case: all shape fields must be positive");
  if (bc.iters < 5) throw std::invalid_argument("bench case: iters must be >= 5");
  if (bc.k % 2 == 0) throw std::invalid_argument("bench case: filter size must be odd");
  const int pad = (bc.k - 1) / 2;
  const ConvGeometry g{1, pad};

  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  Tensor4<float> in(bc.n, bc.ci, bc.h, bc.w, Layout::NCHW);
  Tensor4<float> dout(bc.n, bc.co, bc.h, bc.w, Layout::NCHW);
  for (auto &v : in.data) v = dist(rng);
  for (auto &v : dout.data) v = dist(rng);

  // correctness gate at 64 bit
  {
    Tensor4<double> in64(bc.n, bc.ci, bc.h, bc.w, Layout::NCHW);
    Tensor4<double> dout64(bc.n, bc.co, bc.h, bc.w, Layout::NCHW);
    for (std::size_t i = 0; i < in.size(); ++i) in64.data[i] = in.data[i];
    for (std::size_t i = 0; i < dout.size(); ++i) dout64.data[i] = dout.data[i];
    const FilterTensor<double> want =
        conv2d_filter_grad_dense(in64, densify(sparsify_output_grad(dout64)), bc.k, g);
    const FilterTensor<float> got = transpose_filter(
        approx_filter_grad(transpose_activations(in, Layout::NHWC), dout, bc.k, pad),
        FilterLayout::KKCiCo);
    double max_abs = 0;
    for (const auto &v : want.data) max_abs = std::max(max_abs, std::abs(v));
    for (std::size_t i = 0; i < want.size(); ++i)
      if (std::abs(got.data[i] - want.data[i]) > 1e-5 * std::max(1.0, max_abs))
        throw std::runtime_error("bench correctness gate failed: approx kernel disagrees "
                                 "with the dense oracle on the sparsified gradient");
  }

  BenchResult r;
  r.dense_us = detail::median_time_us(bc.iters, bc.warmup, [&] {
    volatile float sink = conv2d_filter_grad_dense(in, dout, bc.k, g).data[0];
    (void)sink;
  });

  Tensor4<float> nhwc = transpose_activations(in, Layout::NHWC);
  FilterTensor<float> df = approx_filter_grad(nhwc, dout, bc.k, pad);
  r.approx_kernel_us = detail::median_time_us(bc.iters, bc.warmup, [&] {
    volatile float sink = approx_filter_grad(nhwc, dout, bc.k, pad).data[0];
    (void)sink;
  });
  r.transpose_us = detail::median_time_us(bc.iters, bc.warmup, [&] {
    volatile float sink = transpose_activations(in, Layout::NHWC).data[0];
    volatile float sink2 = transpose_filter(df, FilterLayout::KKCiCo).data[0];
    (void)sink;
    (void)sink2;
  });
  r.approx_total_us = r.approx_kernel_us + r.transpose_us;
  r.speedup = r.dense_us / r.approx_total_us;
  return r;
}

struct SweepRow {
  BenchCase bench_case;
  std::optional<BenchResult> result;
  std::string error;
};

inline std::vector<SweepRow> sweep(const std::vector<BenchCase> &cases, std::uint64_t seed,
                                   std::ostream &csv) {
  csv << "n,ci,h,w,co,k,dense_us,approx_kernel_us,transpose_us,approx_total_us,speedup\n";
  std::vector<SweepRow> rows;
  for (const auto &bc : cases) {
    SweepRow row{bc, std::nullopt, ""};
    try {
      row.result = run_bench(bc, seed);
    } catch (const std::exception &e) {
      row.error = e.what();
    }
    csv << bc.n << "," << bc.ci << "," << bc.h << "," << bc.w << "," << bc.co << "," << bc.k << ",";
    if (row.result) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%.2f,%.2f,%.2f,%.2f,%.3f\n", row.result->dense_us,
                    row.result->approx_kernel_us, row.result->transpose_us,
                    row.result->approx_total_us, row.result->speedup);
      csv << buf;
    } else {
      csv << "error,error,error,error,error\n";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace gradapprox
