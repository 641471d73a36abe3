#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gradapprox {

enum class Layout { NCHW, NHWC };
enum class FilterLayout { KKCiCo, CoKKCi };

inline const char *to_string(Layout l) {
  return l == Layout::NCHW ? "NCHW" : "NHWC";
}
inline const char *to_string(FilterLayout l) {
  return l == FilterLayout::KKCiCo ? "KKCiCo" : "CoKKCi";
}

// Dense rank-4 tensor. Element (n,c,h,w) addressing depends on the layout
// tag; the same logical element maps to the same value in either layout.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  Layout layout = Layout::NCHW;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, Layout layout_ = Layout::NCHW)
      : n(n_), c(c_), h(h_), w(w_), layout(layout_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

  std::size_t size() const { return data.size(); }

  std::size_t index(int i, int j, int k, int l) const {
    if (layout == Layout::NCHW)
      return ((static_cast<std::size_t>(i) * c + j) * h + k) * w + l;
    return ((static_cast<std::size_t>(i) * h + k) * w + l) * c + j;
  }

  T &at(int i, int j, int k, int l) { return data[index(i, j, k, l)]; }
  const T &at(int i, int j, int k, int l) const { return data[index(i, j, k, l)]; }

  std::string shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w) + " " + to_string(layout);
  }
};

// Square convolution filter, K*K*Ci*Co values.
template <typename T>
struct FilterTensor {
  int k = 0, ci = 0, co = 0;
  FilterLayout layout = FilterLayout::KKCiCo;
  std::vector<T> data;

  FilterTensor() = default;
  FilterTensor(int k_, int ci_, int co_, FilterLayout layout_ = FilterLayout::KKCiCo)
      : k(k_), ci(ci_), co(co_), layout(layout_),
        data(static_cast<std::size_t>(k_) * k_ * ci_ * co_, T(0)) {}

  std::size_t size() const { return data.size(); }

  std::size_t index(int kr, int kc, int i, int o) const {
    if (layout == FilterLayout::KKCiCo)
      return ((static_cast<std::size_t>(kr) * k + kc) * ci + i) * co + o;
    return ((static_cast<std::size_t>(o) * k + kr) * k + kc) * ci + i;
  }

  T &at(int kr, int kc, int i, int o) { return data[index(kr, kc, i, o)]; }
  const T &at(int kr, int kc, int i, int o) const { return data[index(kr, kc, i, o)]; }

  std::string shape_str() const {
    return std::to_string(k) + "x" + std::to_string(k) + "x" +
           std::to_string(ci) + "x" + std::to_string(co) + " " + to_string(layout);
  }
};

// Out-of-place layout change. Same-layout calls return a copy, so the result
// is always safe to mutate independently of the source.
template <typename T>
Tensor4<T> transpose_activations(const Tensor4<T> &t, Layout target) {
  if (t.layout == target) return t;
  Tensor4<T> out(t.n, t.c, t.h, t.w, target);
  const int c = t.c, h = t.h, w = t.w;
  if (t.layout == Layout::NCHW) {
    // NCHW -> NHWC: read contiguously, scatter over the channel stride.
#pragma omp parallel for schedule(static)
    for (int i = 0; i < t.n; ++i) {
      const T *src = t.data.data() + static_cast<std::size_t>(i) * c * h * w;
      T *dst = out.data.data() + static_cast<std::size_t>(i) * c * h * w;
      for (int j = 0; j < c; ++j)
        for (int p = 0; p < h * w; ++p)
          dst[static_cast<std::size_t>(p) * c + j] = src[static_cast<std::size_t>(j) * h * w + p];
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < t.n; ++i) {
      const T *src = t.data.data() + static_cast<std::size_t>(i) * c * h * w;
      T *dst = out.data.data() + static_cast<std::size_t>(i) * c * h * w;
      for (int p = 0; p < h * w; ++p)
        for (int j = 0; j < c; ++j)
          dst[static_cast<std::size_t>(j) * h * w + p] = src[static_cast<std::size_t>(p) * c + j];
    }
  }
  return out;
}

template <typename T>
FilterTensor<T> transpose_filter(const FilterTensor<T> &f, FilterLayout target) {
  if (f.layout == target) return f;
  FilterTensor<T> out(f.k, f.ci, f.co, target);
  for (int kr = 0; kr < f.k; ++kr)
    for (int kc = 0; kc < f.k; ++kc)
      for (int i = 0; i < f.ci; ++i)
        for (int o = 0; o < f.co; ++o)
          out.at(kr, kc, i, o) = f.at(kr, kc, i, o);
  return out;
}

}  // namespace gradapprox
