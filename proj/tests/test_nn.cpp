#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <random>

#include "gradapprox/model.hpp"
#include "gradapprox/optimizer.hpp"
#include "gradapprox/train.hpp"

using namespace gradapprox;

TEST_CASE("adam leaves parameters unchanged on zero gradient") {
  double p = 0.3, g = 0, m = 0, v = 0;
  adam_update(&p, &g, &m, &v, 1, 1, 1e-3, AdamConfig{});
  REQUIRE(p == 0.3);
  REQUIRE(m == 0.0);
  REQUIRE(v == 0.0);
}

TEST_CASE("single adam step with unit gradient moves by about -1e-3") {
  double p = 0.0, g = 1.0, m = 0, v = 0;
  adam_update(&p, &g, &m, &v, 1, 1, 1e-3, AdamConfig{});
  // bias correction makes mhat = vhat = 1, so the step is lr/(1 + eps)
  REQUIRE(p == Catch::Approx(-9.99999e-4).epsilon(1e-5));
}

TEST_CASE("two constant-gradient adam steps match the hand recurrence") {
  const AdamConfig cfg;
  const double g = 0.7, lr = 1e-3;
  double p = 1.0, m = 0, v = 0;
  adam_update(&p, &g, &m, &v, 1, 1, lr, cfg);
  adam_update(&p, &g, &m, &v, 1, 2, lr, cfg);

  double em = 0, ev = 0, ep = 1.0;
  for (long t = 1; t <= 2; ++t) {
    em = cfg.beta1 * em + (1 - cfg.beta1) * g;
    ev = cfg.beta2 * ev + (1 - cfg.beta2) * g * g;
    const double mhat = em / (1 - std::pow(cfg.beta1, t));
    const double vhat = ev / (1 - std::pow(cfg.beta2, t));
    ep -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  REQUIRE(p == Catch::Approx(ep).margin(1e-15));
}

TEST_CASE("learning rate decays exponentially per epoch") {
  Adam<double> opt;
  std::vector<double> p{0.0}, g{1.0};
  std::vector<ParamRef<double>> params{{"p", &p, &g}};
  opt.init(params);
  opt.step(params, 0);
  const double step0 = -p[0];
  p[0] = 0;
  opt.init(params);
  opt.step(params, 10);
  REQUIRE(-p[0] == Catch::Approx(step0 * std::pow(0.95, 10)));
}

TEST_CASE("model shapes: cnn2 maps a CIFAR batch to 10 logits") {
  auto net = build_model<float>("cnn2", 3);
  Tensor4<float> x(2, 3, 32, 32);
  std::mt19937_64 rng(5);
  std::normal_distribution<float> dist;
  for (auto &v : x.data) v = dist(rng);
  auto y = net.forward(x, true);
  REQUIRE(y.n == 2);
  REQUIRE(y.c == 10);
  REQUIRE(y.h == 1);
  REQUIRE(y.w == 1);
}

TEST_CASE("conv counts: resnet20 has 19 convs, 18 schedulable") {
  auto net = build_model<float>("resnet20", 0);
  REQUIRE(net.convs().size() == 19);
  REQUIRE(net.schedulable_convs().size() == 18);
}

TEST_CASE("conv counts: resnet14 has 13 convs, vgg19 has 16") {
  REQUIRE(build_model<float>("resnet14", 0).convs().size() == 13);
  auto vgg = build_model<float>("vgg19", 0);
  REQUIRE(vgg.convs().size() == 16);
  REQUIRE(vgg.schedulable_convs().size() == 15);
}

TEST_CASE("unknown model name is rejected") {
  REQUIRE_THROWS_AS(build_model<float>("lenet", 0), std::invalid_argument);
}

TEST_CASE("schedule1 approximates 5 resnet20 layers and 4 vgg19 layers") {
  auto r = build_model<float>("resnet20", 0);
  auto s = builtin_schedule("schedule1", static_cast<int>(r.schedulable_convs().size()),
                            ApproxMethod::zero());
  REQUIRE(approximated_layer_count(s) == 5);
  auto v = build_model<float>("vgg19", 0);
  auto s2 = builtin_schedule("schedule1", static_cast<int>(v.schedulable_convs().size()),
                             ApproxMethod::zero());
  REQUIRE(approximated_layer_count(s2) == 4);
}

TEST_CASE("whole-network gradients match finite differences at 64 bit") {
  auto net = build_model<double>("cnn2", 11);
  Tensor4<double> x(2, 3, 32, 32);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> dist;
  for (auto &v : x.data) v = dist(rng);
  std::vector<int> labels{3, 8};

  auto loss = [&] {
    return static_cast<double>(softmax_cross_entropy(net.forward(x, true), labels).loss);
  };
  auto out = softmax_cross_entropy(net.forward(x, true), labels);
  net.backward(out.dlogits);

  auto params = net.params();
  const double h = 1e-5;
  for (auto &p : params) {
    double scale = 1e-12;
    for (auto g : *p.grad) scale = std::max(scale, std::abs(g));
    // two coordinates per array keep the finite-difference pass cheap
    for (std::size_t i : {std::size_t(0), p.value->size() / 2}) {
      const double saved = (*p.value)[i];
      (*p.value)[i] = saved + h;
      const double up = loss();
      (*p.value)[i] = saved - h;
      const double down = loss();
      (*p.value)[i] = saved;
      const double fd = (up - down) / (2 * h);
      INFO(p.name << "[" << i << "]");
      REQUIRE(std::abs((*p.grad)[i] - fd) < 1e-5 * std::max(scale, 1e-6));
    }
  }
}

namespace {

std::pair<Tensor4<float>, std::vector<int>> toy_batch(int n, std::uint64_t seed) {
  Tensor4<float> x(n, 3, 32, 32);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist;
  for (auto &v : x.data) v = dist(rng);
  std::uniform_int_distribution<int> lab(0, 9);
  std::vector<int> y(n);
  for (auto &v : y) v = lab(rng);
  return {std::move(x), std::move(y)};
}

}  // namespace

TEST_CASE("zero method freezes the scheduled filter while others update") {
  auto net = build_model<float>("cnn2", 21);
  auto sched_convs = net.schedulable_convs();
  REQUIRE(sched_convs.size() == 1);
  const auto frozen_init = sched_convs[0]->filter().data;
  const auto stem_init = net.convs()[0]->filter().data;

  Schedule s(1, 1);
  s.cell(0, 0) = ApproxMethod::zero();
  Adam<float> opt;
  auto params = net.params();
  opt.init(params);
  auto [x, y] = toy_batch(8, 91);
  for (long step = 0; step < 6; ++step) train_step(net, x, y, s, step, opt, 0, 21);

  REQUIRE(sched_convs[0]->filter().data == frozen_init);
  REQUIRE(net.convs()[0]->filter().data != stem_init);
}

TEST_CASE("all-full train_step equals a manual exact step") {
  auto net_a = build_model<float>("cnn2", 33);
  auto net_b = build_model<float>("cnn2", 33);
  auto [x, y] = toy_batch(4, 7);

  Schedule all_full(1, 1);
  Adam<float> opt_a;
  auto pa = net_a.params();
  opt_a.init(pa);
  train_step(net_a, x, y, all_full, 0, opt_a, 0, 33);

  Adam<float> opt_b;
  auto pb = net_b.params();
  opt_b.init(pb);
  auto out = softmax_cross_entropy(net_b.forward(x, true), y);
  net_b.backward(out.dlogits);
  opt_b.step(pb, 0);

  for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(*pa[i].value == *pb[i].value);
}

TEST_CASE("loss on a fixed batch decreases over 50 full steps") {
  auto net = build_model<float>("cnn2", 41);
  auto [x, y] = toy_batch(16, 3);
  Schedule all_full(1, 1);
  Adam<float> opt;
  auto params = net.params();
  opt.init(params);
  float first = 0, last = 0;
  for (long step = 0; step < 50; ++step) {
    const float loss = train_step(net, x, y, all_full, step, opt, 0, 41);
    if (step == 0) first = loss;
    last = loss;
  }
  REQUIRE(last < first);
  REQUIRE(last < 0.5f * first);
}

TEST_CASE("kernel invocation counts match the schedule grid over one period") {
  auto net = build_model<float>("cnn2", 55);
  Schedule s(4, 1);
  s.cell(0, 1) = ApproxMethod::random(1.0 / 8);
  s.cell(0, 3) = ApproxMethod::topk(1, 1.0 / 8);
  Adam<float> opt;
  auto params = net.params();
  opt.init(params);
  auto [x, y] = toy_batch(8, 13);

  auto &stats = KernelStats::instance();
  stats.reset();
  for (long step = 0; step < 4; ++step) train_step(net, x, y, s, step, opt, 0, 55);
  // stem conv is always exact (4 calls); scheduled conv is full at phases 0, 2
  REQUIRE(stats.full_calls == 6);
  REQUIRE(stats.random_calls == 1);
  REQUIRE(stats.topk_calls == 1);
  REQUIRE(stats.zero_calls == 0);
  REQUIRE(stats.topk_stride_fallbacks == 0);
}

TEST_CASE("identical config and seed give identical loss sequences") {
  auto run = [] {
    auto net = build_model<float>("cnn2", 77);
    Schedule s(2, 1);
    s.cell(0, 1) = ApproxMethod::random(1.0 / 8);
    Adam<float> opt;
    auto params = net.params();
    opt.init(params);
    auto [x, y] = toy_batch(8, 19);
    std::vector<float> losses;
    for (long step = 0; step < 6; ++step)
      losses.push_back(train_step(net, x, y, s, step, opt, 0, 77));
    return losses;
  };
  REQUIRE(run() == run());
}

TEST_CASE("augment is deterministic for a fixed engine seed") {
  auto [x, y] = toy_batch(4, 23);
  std::mt19937_64 a(99), b(99), c(100);
  REQUIRE(augment(x, a).data == augment(x, b).data);
  REQUIRE(augment(x, a).data != augment(x, c).data);
}

TEST_CASE("augmented pixels come from the source image or the zero pad") {
  auto [x, y] = toy_batch(3, 29);
  std::mt19937_64 rng(7);
  auto out = augment(x, rng);
  REQUIRE(out.n == x.n);
  REQUIRE(out.size() == x.size());
  for (int i = 0; i < x.n; ++i) {
    std::vector<float> pool(x.data.begin() + static_cast<std::size_t>(i) * 3 * 32 * 32,
                            x.data.begin() + static_cast<std::size_t>(i + 1) * 3 * 32 * 32);
    std::sort(pool.begin(), pool.end());
    for (int j = 0; j < 3; ++j)
      for (int r = 0; r < 32; ++r)
        for (int col = 0; col < 32; ++col) {
          const float v = out.at(i, j, r, col);
          if (v != 0.0f) REQUIRE(std::binary_search(pool.begin(), pool.end(), v));
        }
  }
}

TEST_CASE("a flip-only draw preserves the pixel multiset exactly") {
  Tensor4<float> x(1, 3, 32, 32);
  std::mt19937_64 fill(31);
  std::normal_distribution<float> dist;
  for (auto &v : x.data) v = dist(fill);
  auto flipped = [&](const Tensor4<float> &img) {
    Tensor4<float> f = img;
    for (int j = 0; j < 3; ++j)
      for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) f.at(0, j, r, c) = img.at(0, j, r, 31 - c);
    return f;
  };
  auto sorted = [](std::vector<float> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  const auto want = sorted(x.data);
  bool found = false;
  for (std::uint64_t seed = 0; seed < 4000 && !found; ++seed) {
    std::mt19937_64 rng(seed);
    auto out = augment(x, rng);
    if (out.data != x.data && sorted(out.data) == want) {
      REQUIRE(out.data == flipped(x).data);
      found = true;
    }
  }
  REQUIRE(found);
}

TEST_CASE("checkpoint save and load round-trips all parameters") {
  auto net = build_model<float>("resnet14", 61);
  auto params = net.params();
  const std::string prefix = "ckpt_roundtrip_test";
  save_checkpoint(prefix, params);

  auto net2 = build_model<float>("resnet14", 62);
  auto params2 = net2.params();
  bool differed = false;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (*params[i].value != *params2[i].value) differed = true;
  REQUIRE(differed);
  load_checkpoint(prefix, params2);
  for (std::size_t i = 0; i < params.size(); ++i) REQUIRE(*params[i].value == *params2[i].value);

  auto other = build_model<float>("cnn2", 61);
  auto params3 = other.params();
  REQUIRE_THROWS_AS(load_checkpoint(prefix, params3), DataError);
  std::remove((prefix + ".bin").c_str());
  std::remove((prefix + ".manifest").c_str());
}

TEST_CASE("train_step rejects a schedule sized for a different model") {
  auto net = build_model<float>("cnn2", 1);
  Schedule s(1, 3);
  Adam<float> opt;
  auto params = net.params();
  opt.init(params);
  auto [x, y] = toy_batch(2, 2);
  REQUIRE_THROWS_AS(train_step(net, x, y, s, 0, opt, 0, 1), std::invalid_argument);
}
