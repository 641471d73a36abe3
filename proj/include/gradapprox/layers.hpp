#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradapprox/approx.hpp"
#include "gradapprox/kernels.hpp"
#include "gradapprox/tensor.hpp"

namespace gradapprox {

template <typename T>
struct ParamRef {
  std::string name;
  std::vector<T> *value;
  std::vector<T> *grad;
};

template <typename T>
class ConvLayer;

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor4<T> forward(const Tensor4<T> &x, bool train) = 0;
  virtual Tensor4<T> backward(const Tensor4<T> &dy) = 0;
  virtual void collect_params(std::vector<ParamRef<T>> &) {}
  virtual void visit_convs(const std::function<void(ConvLayer<T> *)> &) {}
  virtual std::string name() const = 0;
};

// Convolution without bias (batch norm follows every conv in the reference
// models). The filter gradient is routed through the configured
// approximation method; the input gradient is always exact.
template <typename T>
class ConvLayer : public Layer<T> {
 public:
  ConvLayer(int k, int ci, int co, int stride, int pad, bool schedulable = true)
      : k_(k), ci_(ci), co_(co), g_{stride, pad}, schedulable_(schedulable),
        filter_(k, ci, co, FilterLayout::KKCiCo), fgrad_(filter_.size(), T(0)) {}

  void init(std::mt19937_64 &rng) {
    const double stddev = std::sqrt(2.0 / (static_cast<double>(k_) * k_ * ci_));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto &v : filter_.data) v = static_cast<T>(dist(rng));
  }

  Tensor4<T> forward(const Tensor4<T> &x, bool) override {
    input_ = x;
    return conv2d_forward(x, filter_, g_);
  }

  Tensor4<T> backward(const Tensor4<T> &dy) override {
    FilterTensor<T> df = compute_filter_grad(method_, input_, dy,
                                             FilterShape{k_, ci_, co_}, g_, rng_);
    fgrad_ = std::move(df.data);
    if (!need_input_grad_)
      return Tensor4<T>(input_.n, input_.c, input_.h, input_.w, Layout::NCHW);
    return conv2d_input_grad(dy, filter_, g_, input_.h, input_.w);
  }

  void collect_params(std::vector<ParamRef<T>> &out) override {
    out.push_back({name(), &filter_.data, &fgrad_});
  }
  void visit_convs(const std::function<void(ConvLayer<T> *)> &f) override { f(this); }
  std::string name() const override {
    return "conv" + std::to_string(k_) + "x" + std::to_string(k_) + "_" +
           std::to_string(ci_) + "to" + std::to_string(co_);
  }

  void set_method(const ApproxMethod &m, const RngStream &rng) {
    method_ = m;
    rng_ = rng;
  }
  void set_need_input_grad(bool b) { need_input_grad_ = b; }
  bool schedulable() const { return schedulable_; }
  int stride() const { return g_.stride; }
  const FilterTensor<T> &filter() const { return filter_; }
  FilterTensor<T> &filter() { return filter_; }

 private:
  int k_, ci_, co_;
  ConvGeometry g_;
  bool schedulable_;
  bool need_input_grad_ = true;
  FilterTensor<T> filter_;
  std::vector<T> fgrad_;
  Tensor4<T> input_;
  ApproxMethod method_;
  RngStream rng_;
};

template <typename T>
class BatchNormLayer : public Layer<T> {
 public:
  explicit BatchNormLayer(int c)
      : c_(c), gamma_(c, T(1)), beta_(c, T(0)), dgamma_(c, T(0)), dbeta_(c, T(0)),
        run_mean_(c, T(0)), run_var_(c, T(1)) {}

  Tensor4<T> forward(const Tensor4<T> &x, bool train) override {
    detail::check_nchw(x, "batchnorm input");
    const int plane = x.h * x.w;
    const std::size_t m = static_cast<std::size_t>(x.n) * plane;
    Tensor4<T> y(x.n, x.c, x.h, x.w, Layout::NCHW);
    if (train) {
      input_ = x;
      mean_.assign(c_, T(0));
      invstd_.assign(c_, T(0));
      for (int j = 0; j < c_; ++j) {
        double s = 0;
        for (int i = 0; i < x.n; ++i) {
          const T *p = x.data.data() + (static_cast<std::size_t>(i) * c_ + j) * plane;
          for (int q = 0; q < plane; ++q) s += p[q];
        }
        const double mu = s / static_cast<double>(m);
        double var = 0;
        for (int i = 0; i < x.n; ++i) {
          const T *p = x.data.data() + (static_cast<std::size_t>(i) * c_ + j) * plane;
          for (int q = 0; q < plane; ++q) {
            const double d = p[q] - mu;
            var += d * d;
          }
        }
        var /= static_cast<double>(m);
        mean_[j] = static_cast<T>(mu);
        invstd_[j] = static_cast<T>(1.0 / std::sqrt(var + eps_));
        run_mean_[j] = static_cast<T>((1 - momentum_) * run_mean_[j] + momentum_ * mu);
        run_var_[j] = static_cast<T>((1 - momentum_) * run_var_[j] + momentum_ * var);
      }
      for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < c_; ++j) {
          const T *p = x.data.data() + (static_cast<std::size_t>(i) * c_ + j) * plane;
          T *q = y.data.data() + (static_cast<std::size_t>(i) * c_ + j) * plane;
          const T mu = mean_[j], is = invstd_[j], ga = gamma_[j], be = beta_[j];
          for (int t = 0; t < plane; ++t) q[t] = ga * (p[t] - mu) * is + be;
        }
    } else {
      for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < c_; ++j) {
          const T *p = x.data.data() + (static_cast<std::size_t>(i) * c_ + j) * plane;
          T *q = y.data.data() + (static_cast<std::size_t>(i) * c_ + j) * plane;
          const T mu = run_mean_[j];
          const T is = static_cast<T>(1.0 / std::sqrt(static_cast<double>(run_var_[j]) + eps_));
          const T ga = gamma_[j], be = beta_[j];
          for (int t = 0; t < plane; ++t) q[t] = ga * (p[t] - mu) * is + be;
        }
    }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T> &dy) override {
    const Tensor4<T> &x = input_;
    const int plane = x.h * x.w;
    const std::size_t m = static_cast<std::size_t>(x.n) * plane;
    Tensor4<T> dx(x.n, x.c, x.h, x.w, Layout::NCHW);
    for (int j = 0; j < c_; ++j) {
      const T mu = mean_[j], is = invstd_[j], ga = gamma_[j];
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int i = 0; i < x.n; ++i) {
        const T *px = x.data.data() + (static_cast<std::size_t>(i) * c_ + j) * plane;
        const T *pd = dy.data.data() + (static_cast<std::size_t>(i) * c_ + j) * plane;
        for (int t = 0; t < plane; ++t) {
          sum_dy += pd[t];
          sum_dy_xhat += pd[t] * (px[t] - mu) * is;
        }
      }
      dgamma_[j] = static_cast<T>(sum_dy_xhat);
      dbeta_[j] = static_cast<T>(sum_dy);
      const double inv_m = 1.0 / static_cast<double>(m);
      for (int i = 0; i < x.n; ++i) {
        const T *px = x.data.data() + (static_cast<std::size_t>(i) * c_ + j) * plane;
        const T *pd = dy.data.data() + (static_cast<std::size_t>(i) * c_ + j) * plane;
        T *pq = dx.data.data() + (static_cast<std::size_t>(i) * c_ + j) * plane;
        for (int t = 0; t < plane; ++t) {
          const double xhat = (px[t] - mu) * is;
          pq[t] = static_cast<T>(ga * is * (pd[t] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat));
        }
      }
    }
    return dx;
  }

  void collect_params(std::vector<ParamRef<T>> &out) override {
    out.push_back({name() + ".gamma", &gamma_, &dgamma_});
    out.push_back({name() + ".beta", &beta_, &dbeta_});
  }
  std::string name() const override { return "bn" + std::to_string(c_); }

 private:
  int c_;
  double eps_ = 1e-5, momentum_ = 0.1;
  std::vector<T> gamma_, beta_, dgamma_, dbeta_, run_mean_, run_var_;
  std::vector<T> mean_, invstd_;
  Tensor4<T> input_;
};

template <typename T>
class ReluLayer : public Layer<T> {
 public:
  Tensor4<T> forward(const Tensor4<T> &x, bool) override {
    mask_.assign(x.size(), 0);
    Tensor4<T> y = x;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      if (y.data[i] > 0)
        mask_[i] = 1;
      else
        y.data[i] = 0;
    }
    return y;
  }
  Tensor4<T> backward(const Tensor4<T> &dy) override {
    Tensor4<T> dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
      if (!mask_[i]) dx.data[i] = 0;
    return dx;
  }
  std::string name() const override { return "relu"; }

 private:
  std::vector<unsigned char> mask_;
};

// Floor-mode max pooling; overlapping windows scatter-add in backward.
template <typename T>
class MaxPoolLayer : public Layer<T> {
 public:
  MaxPoolLayer(int size, int stride) : size_(size), stride_(stride) {}

  Tensor4<T> forward(const Tensor4<T> &x, bool) override {
    detail::check_nchw(x, "maxpool input");
    if (x.h < size_ || x.w < size_)
      throw std::invalid_argument("maxpool: input " + x.shape_str() + " smaller than window");
    in_n_ = x.n; in_c_ = x.c; in_h_ = x.h; in_w_ = x.w;
    const int ho = (x.h - size_) / stride_ + 1;
    const int wo = (x.w - size_) / stride_ + 1;
    Tensor4<T> y(x.n, x.c, ho, wo, Layout::NCHW);
    argmax_.resize(y.size());
    std::size_t oi = 0;
    for (int i = 0; i < x.n; ++i)
      for (int j = 0; j < x.c; ++j) {
        const T *plane = x.data.data() + (static_cast<std::size_t>(i) * x.c + j) * x.h * x.w;
        for (int oh = 0; oh < ho; ++oh)
          for (int ow = 0; ow < wo; ++ow, ++oi) {
            const int r0 = oh * stride_, c0 = ow * stride_;
            T best = plane[r0 * x.w + c0];
            int bidx = r0 * x.w + c0;
            for (int r = r0; r < r0 + size_; ++r)
              for (int c = c0; c < c0 + size_; ++c)
                if (plane[r * x.w + c] > best) {
                  best = plane[r * x.w + c];
                  bidx = r * x.w + c;
                }
            y.data[oi] = best;
            argmax_[oi] = bidx;
          }
      }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T> &dy) override {
    Tensor4<T> dx(in_n_, in_c_, in_h_, in_w_, Layout::NCHW);
    const std::size_t plane = static_cast<std::size_t>(in_h_) * in_w_;
    std::size_t oi = 0;
    for (int i = 0; i < dy.n; ++i)
      for (int j = 0; j < dy.c; ++j) {
        T *dplane = dx.data.data() + (static_cast<std::size_t>(i) * in_c_ + j) * plane;
        for (int p = 0; p < dy.h * dy.w; ++p, ++oi) dplane[argmax_[oi]] += dy.data[oi];
      }
    return dx;
  }
  std::string name() const override {
    return "maxpool" + std::to_string(size_) + "s" + std::to_string(stride_);
  }

 private:
  int size_, stride_;
  int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
  std::vector<int> argmax_;
};

template <typename T>
class GlobalAvgPoolLayer : public Layer<T> {
 public:
  Tensor4<T> forward(const Tensor4<T> &x, bool) override {
    detail::check_nchw(x, "gap input");
    in_h_ = x.h; in_w_ = x.w;
    const int plane = x.h * x.w;
    Tensor4<T> y(x.n, x.c, 1, 1, Layout::NCHW);
    for (int i = 0; i < x.n; ++i)
      for (int j = 0; j < x.c; ++j) {
        double s = 0;
        const T *p = x.data.data() + (static_cast<std::size_t>(i) * x.c + j) * plane;
        for (int q = 0; q < plane; ++q) s += p[q];
        y.at(i, j, 0, 0) = static_cast<T>(s / plane);
      }
    return y;
  }
  Tensor4<T> backward(const Tensor4<T> &dy) override {
    const int plane = in_h_ * in_w_;
    Tensor4<T> dx(dy.n, dy.c, in_h_, in_w_, Layout::NCHW);
    for (int i = 0; i < dy.n; ++i)
      for (int j = 0; j < dy.c; ++j) {
        const T g = dy.at(i, j, 0, 0) / static_cast<T>(plane);
        T *p = dx.data.data() + (static_cast<std::size_t>(i) * dy.c + j) * plane;
        for (int q = 0; q < plane; ++q) p[q] = g;
      }
    return dx;
  }
  std::string name() const override { return "gap"; }

 private:
  int in_h_ = 0, in_w_ = 0;
};

// Fully connected layer on the flattened input; output is N x out x 1 x 1.
template <typename T>
class DenseLayer : public Layer<T> {
 public:
  DenseLayer(int in, int out)
      : in_(in), out_(out), w_(static_cast<std::size_t>(out) * in, T(0)), b_(out, T(0)),
        dw_(w_.size(), T(0)), db_(out, T(0)) {}

  void init(std::mt19937_64 &rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / in_));
    for (auto &v : w_) v = static_cast<T>(dist(rng));
  }

  Tensor4<T> forward(const Tensor4<T> &x, bool) override {
    detail::check_nchw(x, "dense input");
    if (x.c * x.h * x.w != in_)
      throw std::invalid_argument("dense: input " + x.shape_str() + " does not flatten to " +
                                  std::to_string(in_));
    input_ = x;
    Tensor4<T> y(x.n, out_, 1, 1, Layout::NCHW);
    detail::gemm(CblasNoTrans, CblasTrans, x.n, out_, in_, T(1), x.data.data(), in_,
                 w_.data(), in_, T(0), y.data.data(), out_);
    for (int i = 0; i < x.n; ++i)
      for (int o = 0; o < out_; ++o) y.data[static_cast<std::size_t>(i) * out_ + o] += b_[o];
    return y;
  }

  Tensor4<T> backward(const Tensor4<T> &dy) override {
    const int n = dy.n;
    detail::gemm(CblasTrans, CblasNoTrans, out_, in_, n, T(1), dy.data.data(), out_,
                 input_.data.data(), in_, T(0), dw_.data(), in_);
    std::fill(db_.begin(), db_.end(), T(0));
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_; ++o) db_[o] += dy.data[static_cast<std::size_t>(i) * out_ + o];
    Tensor4<T> dx(input_.n, input_.c, input_.h, input_.w, Layout::NCHW);
    detail::gemm(CblasNoTrans, CblasNoTrans, n, in_, out_, T(1), dy.data.data(), out_,
                 w_.data(), in_, T(0), dx.data.data(), in_);
    return dx;
  }

  void collect_params(std::vector<ParamRef<T>> &out) override {
    out.push_back({name() + ".w", &w_, &dw_});
    out.push_back({name() + ".b", &b_, &db_});
  }
  std::string name() const override {
    return "dense" + std::to_string(in_) + "to" + std::to_string(out_);
  }

 private:
  int in_, out_;
  std::vector<T> w_, b_, dw_, db_;
  Tensor4<T> input_;
};

// CIFAR-style basic block: conv-bn-relu-conv-bn plus shortcut, then relu.
// Channel increase uses the parameter-free shortcut: stride-2 spatial
// subsampling and zero-padded channels.
template <typename T>
class ResidualBlock : public Layer<T> {
 public:
  ResidualBlock(int cin, int cout, int stride)
      : cin_(cin), cout_(cout), stride_(stride),
        conv1_(3, cin, cout, stride, 1), bn1_(cout),
        conv2_(3, cout, cout, 1, 1), bn2_(cout) {}

  void init(std::mt19937_64 &rng) {
    conv1_.init(rng);
    conv2_.init(rng);
  }

  Tensor4<T> forward(const Tensor4<T> &x, bool train) override {
    Tensor4<T> h = relu1_.forward(bn1_.forward(conv1_.forward(x, train), train), train);
    Tensor4<T> m = bn2_.forward(conv2_.forward(h, train), train);
    Tensor4<T> sc = shortcut(x);
    mask_.assign(m.size(), 0);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      m.data[i] += sc.data[i];
      if (m.data[i] > 0)
        mask_[i] = 1;
      else
        m.data[i] = 0;
    }
    in_h_ = x.h;
    in_w_ = x.w;
    return m;
  }

  Tensor4<T> backward(const Tensor4<T> &dy) override {
    Tensor4<T> dm = dy;
    for (std::size_t i = 0; i < dm.data.size(); ++i)
      if (!mask_[i]) dm.data[i] = 0;
    Tensor4<T> dmain = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(dm)))));
    Tensor4<T> dsc = shortcut_backward(dm);
    for (std::size_t i = 0; i < dmain.data.size(); ++i) dmain.data[i] += dsc.data[i];
    return dmain;
  }

  void collect_params(std::vector<ParamRef<T>> &out) override {
    conv1_.collect_params(out);
    bn1_.collect_params(out);
    conv2_.collect_params(out);
    bn2_.collect_params(out);
  }
  void visit_convs(const std::function<void(ConvLayer<T> *)> &f) override {
    conv1_.visit_convs(f);
    conv2_.visit_convs(f);
  }
  std::string name() const override {
    return "block" + std::to_string(cin_) + "to" + std::to_string(cout_) + "s" +
           std::to_string(stride_);
  }

 private:
  Tensor4<T> shortcut(const Tensor4<T> &x) const {
    if (stride_ == 1 && cin_ == cout_) return x;
    Tensor4<T> y(x.n, cout_, x.h / stride_, x.w / stride_, Layout::NCHW);
    for (int i = 0; i < x.n; ++i)
      for (int j = 0; j < cin_; ++j)
        for (int r = 0; r < y.h; ++r)
          for (int c = 0; c < y.w; ++c)
            y.at(i, j, r, c) = x.at(i, j, r * stride_, c * stride_);
    return y;
  }

  Tensor4<T> shortcut_backward(const Tensor4<T> &dy) const {
    if (stride_ == 1 && cin_ == cout_) return dy;
    Tensor4<T> dx(dy.n, cin_, in_h_, in_w_, Layout::NCHW);
    for (int i = 0; i < dy.n; ++i)
      for (int j = 0; j < cin_; ++j)
        for (int r = 0; r < dy.h; ++r)
          for (int c = 0; c < dy.w; ++c)
            dx.at(i, j, r * stride_, c * stride_) = dy.at(i, j, r, c);
    return dx;
  }

  int cin_, cout_, stride_;
  ConvLayer<T> conv1_;
  BatchNormLayer<T> bn1_;
  ConvLayer<T> conv2_;
  BatchNormLayer<T> bn2_;
  ReluLayer<T> relu1_;
  std::vector<unsigned char> mask_;
  int in_h_ = 0, in_w_ = 0;
};

// Mean softmax cross-entropy over the batch and its logit gradient.
template <typename T>
struct LossResult {
  T loss;
  Tensor4<T> dlogits;
};

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor4<T> &logits, const std::vector<int> &labels) {
  const int n = logits.n, classes = logits.c;
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  Tensor4<T> dl(n, classes, 1, 1, Layout::NCHW);
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const T *z = logits.data.data() + static_cast<std::size_t>(i) * classes;
    T zmax = z[0];
    for (int j = 1; j < classes; ++j) zmax = std::max(zmax, z[j]);
    double denom = 0;
    for (int j = 0; j < classes; ++j) denom += std::exp(static_cast<double>(z[j] - zmax));
    total += -(static_cast<double>(z[labels[i]] - zmax) - std::log(denom));
    for (int j = 0; j < classes; ++j) {
      const double p = std::exp(static_cast<double>(z[j] - zmax)) / denom;
      dl.data[static_cast<std::size_t>(i) * classes + j] =
          static_cast<T>((p - (j == labels[i] ? 1.0 : 0.0)) / n);
    }
  }
  return {static_cast<T>(total / n), std::move(dl)};
}

}  // namespace gradapprox
