#pragma once

#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradapprox/layers.hpp"

namespace gradapprox {

template <typename T>
struct Network {
  std::string model_name;
  int input_c = 3, input_hw = 32, classes = 10;
  std::vector<std::unique_ptr<Layer<T>>> layers;

  Tensor4<T> forward(const Tensor4<T> &x, bool train) {
    Tensor4<T> a = x;
    for (auto &l : layers) a = l->forward(a, train);
    return a;
  }

  Tensor4<T> backward(const Tensor4<T> &dloss) {
    Tensor4<T> d = dloss;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) d = (*it)->backward(d);
    return d;
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (auto &l : layers) l->collect_params(out);
    return out;
  }

  // All conv layers in definition order.
  std::vector<ConvLayer<T> *> convs() {
    std::vector<ConvLayer<T> *> out;
    for (auto &l : layers)
      l->visit_convs([&out](ConvLayer<T> *c) { out.push_back(c); });
    return out;
  }

  // Conv layers a schedule may touch: every conv except the first. Strided
  // convs stay in the indexing; the top-k kernel falls back to the exact
  // path if a schedule lands on one.
  std::vector<ConvLayer<T> *> schedulable_convs() {
    std::vector<ConvLayer<T> *> out;
    for (auto *c : convs())
      if (c->schedulable()) out.push_back(c);
    return out;
  }
};

namespace detail {

template <typename T>
void finish_build(Network<T> &net, std::mt19937_64 &rng) {
  auto cs = net.convs();
  if (!cs.empty()) cs.front()->set_need_input_grad(false);
  for (auto &l : net.layers) {
    if (auto *c = dynamic_cast<ConvLayer<T> *>(l.get())) c->init(rng);
    if (auto *d = dynamic_cast<DenseLayer<T> *>(l.get())) d->init(rng);
    if (auto *b = dynamic_cast<ResidualBlock<T> *>(l.get())) b->init(rng);
  }
}

inline int pool_out(int in, int size, int stride) { return (in - size) / stride + 1; }

}  // namespace detail

// Reference models. cnn2 is the 2-conv CIFAR baseline with batch norm; the
// resnets are the CIFAR 6n+2 family with widths 16/32/64; vgg19 is the
// 16-conv configuration with batch norm.
template <typename T>
Network<T> build_model(const std::string &name, std::uint64_t seed, int input_c = 3,
                       int input_hw = 32) {
  std::mt19937_64 rng(seed ^ 0x6a09e667f3bcc908ULL);
  Network<T> net;
  net.model_name = name;
  net.input_c = input_c;
  net.input_hw = input_hw;

  auto add = [&net](Layer<T> *l) { net.layers.emplace_back(l); };

  if (name == "cnn2") {
    auto *c1 = new ConvLayer<T>(5, input_c, 64, 1, 2, /*schedulable=*/false);
    add(c1);
    add(new BatchNormLayer<T>(64));
    add(new ReluLayer<T>());
    add(new MaxPoolLayer<T>(3, 2));
    const int s1 = detail::pool_out(input_hw, 3, 2);
    add(new ConvLayer<T>(5, 64, 64, 1, 2));
    add(new BatchNormLayer<T>(64));
    add(new ReluLayer<T>());
    add(new MaxPoolLayer<T>(3, 2));
    const int s2 = detail::pool_out(s1, 3, 2);
    add(new DenseLayer<T>(64 * s2 * s2, 384));
    add(new ReluLayer<T>());
    add(new DenseLayer<T>(384, 192));
    add(new ReluLayer<T>());
    add(new DenseLayer<T>(192, net.classes));
  } else if (name == "resnet20" || name == "resnet14") {
    const int n = name == "resnet20" ? 3 : 2;
    auto *stem = new ConvLayer<T>(3, input_c, 16, 1, 1, /*schedulable=*/false);
    add(stem);
    add(new BatchNormLayer<T>(16));
    add(new ReluLayer<T>());
    const int widths[3] = {16, 32, 64};
    int cin = 16;
    for (int stage = 0; stage < 3; ++stage)
      for (int b = 0; b < n; ++b) {
        const int stride = (stage > 0 && b == 0) ? 2 : 1;
        add(new ResidualBlock<T>(cin, widths[stage], stride));
        cin = widths[stage];
      }
    add(new GlobalAvgPoolLayer<T>());
    add(new DenseLayer<T>(64, net.classes));
  } else if (name == "vgg19") {
    const int cfg[] = {64, 64, -1, 128, 128, -1, 256, 256, 256, 256, -1,
                       512, 512, 512, 512, -1, 512, 512, 512, 512, -1};
    int cin = input_c;
    bool first = true;
    for (int v : cfg) {
      if (v < 0) {
        add(new MaxPoolLayer<T>(2, 2));
        continue;
      }
      add(new ConvLayer<T>(3, cin, v, 1, 1, /*schedulable=*/!first));
      add(new BatchNormLayer<T>(v));
      add(new ReluLayer<T>());
      cin = v;
      first = false;
    }
    add(new DenseLayer<T>(512, net.classes));
  } else {
    throw std::invalid_argument("unknown model: " + name);
  }

  detail::finish_build(net, rng);
  return net;
}

}  // namespace gradapprox
