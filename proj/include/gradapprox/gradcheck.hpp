#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gradapprox/layers.hpp"

namespace gradapprox {

struct GradCheckResult {
  struct Entry {
    std::string name;
    double max_rel_err;
    bool pass;
  };
  std::vector<Entry> entries;
  bool ok = true;

  void add(const std::string &name, double err, double tol) {
    entries.push_back({name, err, err < tol});
    ok = ok && err < tol;
  }
};

namespace detail {

template <typename T>
std::vector<T> fdiff(std::vector<T> &x, const std::function<double()> &loss, double h) {
  std::vector<T> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T saved = x[i];
    x[i] = static_cast<T>(saved + h);
    const double up = loss();
    x[i] = static_cast<T>(saved - h);
    const double down = loss();
    x[i] = saved;
    g[i] = static_cast<T>((up - down) / (2 * h));
  }
  return g;
}

template <typename T>
double rel_err(const std::vector<T> &got, const std::vector<T> &want) {
  double scale = 1e-12, worst = 0;
  for (const auto &v : want) scale = std::max(scale, std::abs(static_cast<double>(v)));
  for (std::size_t i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(got[i]) -
                                     static_cast<double>(want[i])) / scale);
  return worst;
}

// Checks a layer's input and parameter gradients against central finite
// differences through the scalar loss sum(w .* forward(x)).
template <typename T>
void check_layer(GradCheckResult &res, const std::string &name, Layer<T> &layer,
                 Tensor4<T> x, std::mt19937_64 &rng, double h, double tol,
                 bool inject_fault = false) {
  Tensor4<T> y0 = layer.forward(x, true);
  Tensor4<T> w(y0.n, y0.c, y0.h, y0.w, Layout::NCHW);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto &v : w.data) v = static_cast<T>(dist(rng));

  auto loss = [&] {
    Tensor4<T> y = layer.forward(x, true);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      s += static_cast<double>(y.data[i]) * static_cast<double>(w.data[i]);
    return s;
  };

  layer.forward(x, true);
  Tensor4<T> dx = layer.backward(w);
  if (inject_fault && !dx.data.empty()) dx.data[0] = -dx.data[0];
  res.add(name + ".dx", rel_err(dx.data, fdiff(x.data, loss, h)), tol);

  std::vector<ParamRef<T>> params;
  layer.collect_params(params);
  for (auto &p : params) {
    std::vector<T> analytic = *p.grad;
    res.add(p.name, rel_err(analytic, fdiff(*p.value, loss, h)), tol);
  }
}

}  // namespace detail

// Finite-difference validation of every layer kind and the dense conv
// kernels. inject_fault flips one analytic gradient sign, for verifying the
// harness actually detects faults.
template <typename T>
GradCheckResult run_gradcheck(double tol, bool inject_fault = false) {
  const double h = sizeof(T) == 8 ? 1e-6 : 2e-3;
  GradCheckResult res;
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> dist(0.0, 1.0);
  auto fill = [&](auto &t) {
    for (auto &v : t.data) v = static_cast<T>(dist(rng));
  };

  {
    ConvLayer<T> conv(3, 2, 3, 1, 1);
    conv.init(rng);
    Tensor4<T> x(2, 2, 4, 4);
    fill(x);
    detail::check_layer(res, "conv3x3", conv, x, rng, h, tol, inject_fault);
  }
  {
    ConvLayer<T> conv(3, 2, 3, 2, 1);
    conv.init(rng);
    Tensor4<T> x(2, 2, 5, 5);
    fill(x);
    detail::check_layer(res, "conv3x3s2", conv, x, rng, h, tol);
  }
  {
    BatchNormLayer<T> bn(3);
    Tensor4<T> x(3, 3, 3, 3);
    fill(x);
    detail::check_layer(res, "batchnorm", bn, x, rng, h, tol);
  }
  {
    ReluLayer<T> relu;
    Tensor4<T> x(2, 3, 3, 3);
    fill(x);
    detail::check_layer(res, "relu", relu, x, rng, h, tol);
  }
  {
    MaxPoolLayer<T> pool(3, 2);
    Tensor4<T> x(2, 2, 7, 7);
    fill(x);
    detail::check_layer(res, "maxpool", pool, x, rng, h, tol);
  }
  {
    GlobalAvgPoolLayer<T> gap;
    Tensor4<T> x(2, 3, 4, 4);
    fill(x);
    detail::check_layer(res, "gap", gap, x, rng, h, tol);
  }
  {
    DenseLayer<T> dense(12, 5);
    dense.init(rng);
    Tensor4<T> x(3, 3, 2, 2);
    fill(x);
    detail::check_layer(res, "dense", dense, x, rng, h, tol);
  }
  if (sizeof(T) == 8) {
    // The block's inner conv/bn gradients are mostly cancelled by the second
    // batch norm, leaving values too small to resolve against float
    // finite differences; the composite check runs at 64-bit only.
    ResidualBlock<T> block(4, 8, 2);
    block.init(rng);
    Tensor4<T> x(2, 4, 6, 6);
    fill(x);
    detail::check_layer(res, "residual_block", block, x, rng, h, tol);
  }
  {
    // softmax cross-entropy: analytic dlogits vs finite differences
    Tensor4<T> logits(3, 5, 1, 1);
    fill(logits);
    std::vector<int> labels = {1, 4, 0};
    auto loss = [&] {
      return static_cast<double>(softmax_cross_entropy(logits, labels).loss);
    };
    auto analytic = softmax_cross_entropy(logits, labels).dlogits;
    res.add("softmax_xent", detail::rel_err(analytic.data, detail::fdiff(logits.data, loss, h)),
            tol);
  }
  return res;
}

}  // namespace gradapprox
