// Test-only reference implementations: direct-summation convolutions and
// central finite differences. Deliberately naive and independent of the
// lowering-based kernels they check.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gradapprox/kernels.hpp"
#include "gradapprox/tensor.hpp"

namespace oracle {

using gradapprox::ConvGeometry;
using gradapprox::FilterLayout;
using gradapprox::FilterTensor;
using gradapprox::Layout;
using gradapprox::Tensor4;

template <typename T>
T pixel(const Tensor4<T> &t, int n, int c, int r, int q) {
  if (r < 0 || r >= t.h || q < 0 || q >= t.w) return T(0);
  return t.at(n, c, r, q);
}

template <typename T>
Tensor4<T> direct_conv_forward(const Tensor4<T> &in, const FilterTensor<T> &f,
                               const ConvGeometry &g) {
  const int ho = gradapprox::conv_out_size(in.h, f.k, g);
  const int wo = gradapprox::conv_out_size(in.w, f.k, g);
  Tensor4<T> out(in.n, f.co, ho, wo, Layout::NCHW);
  for (int n = 0; n < in.n; ++n)
    for (int o = 0; o < f.co; ++o)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          double acc = 0;
          for (int c = 0; c < f.ci; ++c)
            for (int kr = 0; kr < f.k; ++kr)
              for (int kc = 0; kc < f.k; ++kc)
                acc += static_cast<double>(pixel(in, n, c, oh * g.stride + kr - g.pad,
                                                 ow * g.stride + kc - g.pad)) *
                       static_cast<double>(f.at(kr, kc, c, o));
          out.at(n, o, oh, ow) = static_cast<T>(acc);
        }
  return out;
}

template <typename T>
FilterTensor<T> direct_filter_grad(const Tensor4<T> &in, const Tensor4<T> &dout, int k,
                                   const ConvGeometry &g) {
  FilterTensor<T> df(k, in.c, dout.c, FilterLayout::KKCiCo);
  for (int kr = 0; kr < k; ++kr)
    for (int kc = 0; kc < k; ++kc)
      for (int c = 0; c < in.c; ++c)
        for (int o = 0; o < dout.c; ++o) {
          double acc = 0;
          for (int n = 0; n < in.n; ++n)
            for (int oh = 0; oh < dout.h; ++oh)
              for (int ow = 0; ow < dout.w; ++ow)
                acc += static_cast<double>(pixel(in, n, c, oh * g.stride + kr - g.pad,
                                                 ow * g.stride + kc - g.pad)) *
                       static_cast<double>(dout.at(n, o, oh, ow));
          df.at(kr, kc, c, o) = static_cast<T>(acc);
        }
  return df;
}

template <typename T>
Tensor4<T> direct_input_grad(const Tensor4<T> &dout, const FilterTensor<T> &f,
                             const ConvGeometry &g, int in_h, int in_w) {
  Tensor4<T> din(dout.n, f.ci, in_h, in_w, Layout::NCHW);
  for (int n = 0; n < dout.n; ++n)
    for (int o = 0; o < f.co; ++o)
      for (int oh = 0; oh < dout.h; ++oh)
        for (int ow = 0; ow < dout.w; ++ow) {
          const double d = dout.at(n, o, oh, ow);
          for (int c = 0; c < f.ci; ++c)
            for (int kr = 0; kr < f.k; ++kr)
              for (int kc = 0; kc < f.k; ++kc) {
                const int r = oh * g.stride + kr - g.pad;
                const int q = ow * g.stride + kc - g.pad;
                if (r >= 0 && r < in_h && q >= 0 && q < in_w)
                  din.at(n, c, r, q) += static_cast<T>(d * f.at(kr, kc, c, o));
              }
        }
  return din;
}

// Central finite differences of a scalar loss over one flat array.
template <typename T>
std::vector<T> finite_diff(std::vector<T> &x, const std::function<double()> &loss, double h) {
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
double max_rel_err(const std::vector<T> &got, const std::vector<T> &want) {
  double scale = 0;
  for (const auto &v : want) scale = std::max(scale, std::abs(static_cast<double>(v)));
  scale = std::max(scale, 1e-12);
  double worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(got[i]) - static_cast<double>(want[i])) / scale);
  return worst;
}

}  // namespace oracle
