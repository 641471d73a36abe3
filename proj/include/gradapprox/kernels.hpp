#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "gradapprox/blas.hpp"
#include "gradapprox/tensor.hpp"

namespace gradapprox {

struct ConvGeometry {
  int stride = 1;
  int pad = 0;
};

// Floor semantics: trailing rows/columns that do not fill a full stride are
// dropped, as in the standard CIFAR ResNet downsampling convs.
inline int conv_out_size(int in, int k, const ConvGeometry &g) {
  const int num = in + 2 * g.pad - k;
  if (num < 0)
    throw std::invalid_argument("conv geometry invalid: in=" + std::to_string(in) +
                                " k=" + std::to_string(k) +
                                " stride=" + std::to_string(g.stride) +
                                " pad=" + std::to_string(g.pad));
  return num / g.stride + 1;
}

namespace detail {

// One image (C,H,W) -> column matrix [Ci*K*K x Ho*Wo], row order (ci,kr,kc).
template <typename T>
void im2col(const T *src, int ci, int h, int w, int k, const ConvGeometry &g,
            int ho, int wo, T *col) {
  const int rows = ci * k * k;
  for (int r = 0; r < rows; ++r) {
    const int c = r / (k * k);
    const int kr = (r / k) % k;
    const int kc = r % k;
    const T *plane = src + static_cast<std::size_t>(c) * h * w;
    T *dst = col + static_cast<std::size_t>(r) * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      const int ih = oh * g.stride + kr - g.pad;
      for (int ow = 0; ow < wo; ++ow) {
        const int iw = ow * g.stride + kc - g.pad;
        dst[oh * wo + ow] = (ih >= 0 && ih < h && iw >= 0 && iw < w)
                                ? plane[ih * w + iw]
                                : T(0);
      }
    }
  }
}

// Scatter-add of a column matrix back into one image, transpose of im2col.
template <typename T>
void col2im_add(const T *col, int ci, int h, int w, int k, const ConvGeometry &g,
                int ho, int wo, T *dst) {
  const int rows = ci * k * k;
  for (int r = 0; r < rows; ++r) {
    const int c = r / (k * k);
    const int kr = (r / k) % k;
    const int kc = r % k;
    T *plane = dst + static_cast<std::size_t>(c) * h * w;
    const T *src = col + static_cast<std::size_t>(r) * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      const int ih = oh * g.stride + kr - g.pad;
      if (ih < 0 || ih >= h) continue;
      for (int ow = 0; ow < wo; ++ow) {
        const int iw = ow * g.stride + kc - g.pad;
        if (iw >= 0 && iw < w) plane[ih * w + iw] += src[oh * wo + ow];
      }
    }
  }
}

// KKCiCo filter -> row-major [Co x Ci*K*K] matrix matching the im2col row order.
template <typename T>
std::vector<T> pack_filter(const FilterTensor<T> &f) {
  const int rows = f.ci * f.k * f.k;
  std::vector<T> m(static_cast<std::size_t>(f.co) * rows);
  for (int o = 0; o < f.co; ++o)
    for (int c = 0; c < f.ci; ++c)
      for (int kr = 0; kr < f.k; ++kr)
        for (int kc = 0; kc < f.k; ++kc)
          m[static_cast<std::size_t>(o) * rows + (c * f.k + kr) * f.k + kc] =
              f.at(kr, kc, c, o);
  return m;
}

template <typename T>
void check_nchw(const Tensor4<T> &t, const char *what) {
  if (t.layout != Layout::NCHW)
    throw std::invalid_argument(std::string(what) + " must be NCHW, got " +
                                t.shape_str());
}

// Single pass semantics: value of the largest |element| with smallest
// row-major index on ties, plus the plane total. Split into reduction loops
// so the compiler can vectorize them.
template <typename T>
void plane_absmax_sum(const T *p, int len, int &idx, T &sum) {
  // One vector pass recording per-chunk maxima, so the index search only
  // has to rescan the single chunk holding the global maximum.
  const int kChunk = len <= 256 * 64 ? 256 : (len + 63) / 64;
  T chunk_max[64];
  T m = 0, s = 0;
  int chunks = 0;
  for (int base = 0; base < len; base += kChunk, ++chunks) {
    const int end = std::min(base + kChunk, len);
    T cm = 0, cs = 0;
#pragma omp simd reduction(max : cm) reduction(+ : cs)
    for (int i = base; i < end; ++i) {
      const T a = p[i] < 0 ? -p[i] : p[i];
      cm = a > cm ? a : cm;
      cs += p[i];
    }
    chunk_max[chunks] = cm;
    m = cm > m ? cm : m;
    s += cs;
  }
  int best = len;
  for (int c = 0; c < chunks; ++c) {
    if (chunk_max[c] == m) {
      const int end = std::min((c + 1) * kChunk, len);
#pragma omp simd reduction(min : best)
      for (int i = c * kChunk; i < end; ++i) {
        const T a = p[i] < 0 ? -p[i] : p[i];
        const int cand = a == m ? i : len;
        best = cand < best ? cand : best;
      }
      break;
    }
  }
  idx = best < len ? best : 0;
  sum = s;
}

}  // namespace detail

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T> &in, const FilterTensor<T> &f,
                          const ConvGeometry &g) {
  detail::check_nchw(in, "conv2d_forward input");
  if (f.layout != FilterLayout::KKCiCo)
    throw std::invalid_argument("conv2d_forward filter must be KKCiCo");
  if (in.c != f.ci)
    throw std::invalid_argument("conv2d_forward channel mismatch: input " +
                                in.shape_str() + " vs filter " + f.shape_str());
  const int ho = conv_out_size(in.h, f.k, g);
  const int wo = conv_out_size(in.w, f.k, g);
  const int rows = f.ci * f.k * f.k;
  const std::vector<T> fmat = detail::pack_filter(f);

  Tensor4<T> out(in.n, f.co, ho, wo, Layout::NCHW);
#pragma omp parallel
  {
    std::vector<T> col(static_cast<std::size_t>(rows) * ho * wo);
#pragma omp for schedule(static)
    for (int i = 0; i < in.n; ++i) {
      const T *src = in.data.data() + static_cast<std::size_t>(i) * in.c * in.h * in.w;
      detail::im2col(src, in.c, in.h, in.w, f.k, g, ho, wo, col.data());
      T *dst = out.data.data() + static_cast<std::size_t>(i) * f.co * ho * wo;
      detail::gemm(CblasNoTrans, CblasNoTrans, f.co, ho * wo, rows, T(1),
                   fmat.data(), rows, col.data(), ho * wo, T(0), dst, ho * wo);
    }
  }
  return out;
}

template <typename T>
Tensor4<T> conv2d_input_grad(const Tensor4<T> &dout, const FilterTensor<T> &f,
                             const ConvGeometry &g, int in_h, int in_w) {
  detail::check_nchw(dout, "conv2d_input_grad dO");
  if (f.layout != FilterLayout::KKCiCo)
    throw std::invalid_argument("conv2d_input_grad filter must be KKCiCo");
  if (dout.c != f.co)
    throw std::invalid_argument("conv2d_input_grad channel mismatch: dO " +
                                dout.shape_str() + " vs filter " + f.shape_str());
  const int ho = conv_out_size(in_h, f.k, g);
  const int wo = conv_out_size(in_w, f.k, g);
  if (ho != dout.h || wo != dout.w)
    throw std::invalid_argument("conv2d_input_grad spatial mismatch: dO " +
                                dout.shape_str() + " expects " + std::to_string(ho) +
                                "x" + std::to_string(wo));
  const int rows = f.ci * f.k * f.k;
  const std::vector<T> fmat = detail::pack_filter(f);

  Tensor4<T> din(dout.n, f.ci, in_h, in_w, Layout::NCHW);
#pragma omp parallel
  {
    std::vector<T> col(static_cast<std::size_t>(rows) * ho * wo);
#pragma omp for schedule(static)
    for (int i = 0; i < dout.n; ++i) {
      const T *dsrc = dout.data.data() + static_cast<std::size_t>(i) * f.co * ho * wo;
      detail::gemm(CblasTrans, CblasNoTrans, rows, ho * wo, f.co, T(1),
                   fmat.data(), rows, dsrc, ho * wo, T(0), col.data(), ho * wo);
      T *dst = din.data.data() + static_cast<std::size_t>(i) * f.ci * in_h * in_w;
      detail::col2im_add(col.data(), f.ci, in_h, in_w, f.k, g, ho, wo, dst);
    }
  }
  return din;
}

// Exact filter gradient, the dense baseline the approximation is measured
// against. Accumulation over the batch is in batch-index order.
template <typename T>
FilterTensor<T> conv2d_filter_grad_dense(const Tensor4<T> &in, const Tensor4<T> &dout,
                                         int k, const ConvGeometry &g) {
  detail::check_nchw(in, "conv2d_filter_grad_dense input");
  detail::check_nchw(dout, "conv2d_filter_grad_dense dO");
  if (in.n != dout.n)
    throw std::invalid_argument("conv2d_filter_grad_dense batch mismatch: " +
                                in.shape_str() + " vs " + dout.shape_str());
  const int ho = conv_out_size(in.h, k, g);
  const int wo = conv_out_size(in.w, k, g);
  if (ho != dout.h || wo != dout.w)
    throw std::invalid_argument("conv2d_filter_grad_dense spatial mismatch: dO " +
                                dout.shape_str() + " expects " + std::to_string(ho) +
                                "x" + std::to_string(wo));
  const int ci = in.c, co = dout.c;
  const int rows = ci * k * k;

  std::vector<T> acc(static_cast<std::size_t>(co) * rows, T(0));
  std::vector<T> col(static_cast<std::size_t>(rows) * ho * wo);
  for (int i = 0; i < in.n; ++i) {
    const T *src = in.data.data() + static_cast<std::size_t>(i) * ci * in.h * in.w;
    detail::im2col(src, ci, in.h, in.w, k, g, ho, wo, col.data());
    const T *dsrc = dout.data.data() + static_cast<std::size_t>(i) * co * ho * wo;
    detail::gemm(CblasNoTrans, CblasTrans, co, rows, ho * wo, T(1), dsrc, ho * wo,
                 col.data(), ho * wo, T(1), acc.data(), rows);
  }

  FilterTensor<T> df(k, ci, co, FilterLayout::KKCiCo);
  for (int o = 0; o < co; ++o)
    for (int c = 0; c < ci; ++c)
      for (int kr = 0; kr < k; ++kr)
        for (int kc = 0; kc < k; ++kc)
          df.at(kr, kc, c, o) = acc[static_cast<std::size_t>(o) * rows + (c * k + kr) * k + kc];
  return df;
}

// One (row, col, value) triple per (batch element, output channel).
template <typename T>
struct SparseOutputGrad {
  struct Entry {
    int row = 0, col = 0;
    T value = 0;
  };
  int n = 0, co = 0, h = 0, w = 0;
  std::vector<Entry> entries;  // index i*co + j

  const Entry &at(int i, int j) const { return entries[static_cast<std::size_t>(i) * co + j]; }
};

template <typename T>
SparseOutputGrad<T> sparsify_output_grad(const Tensor4<T> &dout) {
  detail::check_nchw(dout, "sparsify_output_grad dO");
  const int hw = dout.h * dout.w;
  if (hw < 1) throw std::invalid_argument("sparsify_output_grad: empty plane");
  SparseOutputGrad<T> s;
  s.n = dout.n;
  s.co = dout.c;
  s.h = dout.h;
  s.w = dout.w;
  s.entries.resize(static_cast<std::size_t>(dout.n) * dout.c);
  for (int i = 0; i < dout.n; ++i)
    for (int j = 0; j < dout.c; ++j) {
      const T *plane = dout.data.data() + (static_cast<std::size_t>(i) * dout.c + j) * hw;
      int idx;
      T sum;
      detail::plane_absmax_sum(plane, hw, idx, sum);
      s.entries[static_cast<std::size_t>(i) * dout.c + j] = {idx / dout.w, idx % dout.w, sum};
    }
  return s;
}

template <typename T>
Tensor4<T> densify(const SparseOutputGrad<T> &s) {
  Tensor4<T> out(s.n, s.co, s.h, s.w, Layout::NCHW);
  for (int i = 0; i < s.n; ++i)
    for (int j = 0; j < s.co; ++j) {
      const auto &e = s.at(i, j);
      out.at(i, j, e.row, e.col) = e.value;
    }
  return out;
}

namespace detail {

template <typename T>
void check_approx_shapes(const Tensor4<T> &in, const Tensor4<T> &dout, int k, int pad) {
  if (in.layout != Layout::NHWC)
    throw std::invalid_argument("approx_filter_grad input must be NHWC, got " + in.shape_str());
  check_nchw(dout, "approx_filter_grad dO");
  if (in.n != dout.n)
    throw std::invalid_argument("approx_filter_grad batch mismatch: " + in.shape_str() +
                                " vs " + dout.shape_str());
  if (k < 1) throw std::invalid_argument("approx_filter_grad: filter size must be >= 1");
  bool ok;
  if (pad == 0) {
    ok = dout.h == in.h - k + 1 && dout.w == in.w - k + 1;
  } else if (k % 2 == 1 && pad == (k - 1) / 2) {
    ok = dout.h == in.h && dout.w == in.w;
  } else {
    throw std::invalid_argument("approx_filter_grad: pad must be 0 or (k-1)/2 with odd k; got k=" +
                                std::to_string(k) + " pad=" + std::to_string(pad));
  }
  if (!ok)
    throw std::invalid_argument("approx_filter_grad spatial mismatch: input " + in.shape_str() +
                                " dO " + dout.shape_str() + " k=" + std::to_string(k) +
                                " pad=" + std::to_string(pad));
}

// dfc[kr][kc][:] += val * I[n, r0+kr, c0+kc, :], zero outside the border.
template <typename T>
void accumulate_patch(T *dfc, const Tensor4<T> &in, int n, int r0, int c0, int k, T val) {
  const int ci = in.c;
  const T *img = in.data.data() + static_cast<std::size_t>(n) * in.h * in.w * ci;
  for (int kr = 0; kr < k; ++kr) {
    const int ir = r0 + kr;
    if (ir < 0 || ir >= in.h) continue;
    for (int kc = 0; kc < k; ++kc) {
      const int ic = c0 + kc;
      if (ic < 0 || ic >= in.w) continue;
      const T *src = img + (static_cast<std::size_t>(ir) * in.w + ic) * ci;
      T *dst = dfc + (static_cast<std::size_t>(kr) * k + kc) * ci;
      for (int q = 0; q < ci; ++q) dst[q] += val * src[q];
    }
  }
}

}  // namespace detail

// Sparsified filter-gradient kernel: per (batch element, output channel) keep
// the k largest-|dO| positions, each valued (plane sum)/k, and accumulate the
// corresponding K*K*Ci input patches. Stride 1 only. Output channels are the
// independent parallel work units; within a channel the batch order is fixed.
template <typename T>
FilterTensor<T> approx_filter_grad_topk(const Tensor4<T> &in_nhwc, const Tensor4<T> &dout,
                                        int k_filter, int pad, int k) {
  detail::check_approx_shapes(in_nhwc, dout, k_filter, pad);
  const int hw = dout.h * dout.w;
  if (k < 1 || k > hw)
    throw std::invalid_argument("approx_filter_grad_topk: k=" + std::to_string(k) +
                                " out of range [1, " + std::to_string(hw) + "]");
  const int n = dout.n, co = dout.c, ci = in_nhwc.c;
  FilterTensor<T> df(k_filter, ci, co, FilterLayout::CoKKCi);
  const std::size_t per_channel = static_cast<std::size_t>(k_filter) * k_filter * ci;

  if (k == 1) {
    // Algorithm as written: one streaming sparsification pass over dO in
    // memory order, then per-channel patch accumulation.
    const SparseOutputGrad<T> s = sparsify_output_grad(dout);
    // Batch-outer so each image's patch rows stay cache-resident; channels
    // remain the race-free parallel units (static partition, each channel
    // still accumulates in batch order).
#pragma omp parallel
    {
      for (int i = 0; i < n; ++i) {
#pragma omp for schedule(static) nowait
        for (int c = 0; c < co; ++c) {
          T *dfc = df.data.data() + static_cast<std::size_t>(c) * per_channel;
          const auto &e = s.at(i, c);
          detail::accumulate_patch(dfc, in_nhwc, i, e.row - pad, e.col - pad, k_filter,
                                   e.value);
        }
      }
    }
    return df;
  }

#pragma omp parallel
  {
    std::vector<int> order;
#pragma omp for schedule(static)
    for (int c = 0; c < co; ++c) {
      T *dfc = df.data.data() + static_cast<std::size_t>(c) * per_channel;
      for (int i = 0; i < n; ++i) {
        const T *plane = dout.data.data() + (static_cast<std::size_t>(i) * co + c) * hw;
        {
          order.resize(hw);
          std::iota(order.begin(), order.end(), 0);
          std::partial_sort(order.begin(), order.begin() + k, order.end(),
                            [plane](int a, int b) {
                              const T aa = std::abs(plane[a]), ab = std::abs(plane[b]);
                              return aa != ab ? aa > ab : a < b;
                            });
          T sum = 0;
          for (int p = 0; p < hw; ++p) sum += plane[p];
          const T val = sum / static_cast<T>(k);
          for (int p = 0; p < k; ++p)
            detail::accumulate_patch(dfc, in_nhwc, i, order[p] / dout.w - pad,
                                     order[p] % dout.w - pad, k_filter, val);
        }
      }
    }
  }
  return df;
}

template <typename T>
FilterTensor<T> approx_filter_grad(const Tensor4<T> &in_nhwc, const Tensor4<T> &dout,
                                   int k_filter, int pad) {
  return approx_filter_grad_topk(in_nhwc, dout, k_filter, pad, 1);
}

}  // namespace gradapprox
