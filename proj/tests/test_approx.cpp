#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "gradapprox/approx.hpp"

using namespace gradapprox;

TEST_CASE("zero method returns a zero tensor of the filter shape") {
  Tensor4<float> in(2, 3, 4, 4), dout(2, 5, 4, 4);
  auto df = compute_filter_grad(ApproxMethod::zero(), in, dout, {3, 3, 5}, {1, 1}, {});
  REQUIRE(df.size() == std::size_t(3 * 3 * 3 * 5));
  for (auto v : df.data) REQUIRE(v == 0.0f);
}

TEST_CASE("random method is deterministic per (seed, layer, step)") {
  Tensor4<float> in(2, 3, 4, 4), dout(2, 5, 4, 4);
  auto m = ApproxMethod::random(1.0 / 128);
  auto a = compute_filter_grad(m, in, dout, {3, 3, 5}, {1, 1}, {42, 1, 7});
  auto b = compute_filter_grad(m, in, dout, {3, 3, 5}, {1, 1}, {42, 1, 7});
  auto c = compute_filter_grad(m, in, dout, {3, 3, 5}, {1, 1}, {42, 1, 8});
  REQUIRE(a.data == b.data);
  REQUIRE(a.data != c.data);
}

TEST_CASE("random draws never repeat across consecutive steps") {
  for (long step = 0; step < 50; ++step) {
    auto a = random_filter_grad<float>(3, 2, 2, 1.0 / 128, {7, 0, step});
    auto b = random_filter_grad<float>(3, 2, 2, 1.0 / 128, {7, 0, step + 1});
    REQUIRE(a.data != b.data);
  }
}

TEST_CASE("random gradient statistics at sigma = 1/128") {
  const int n = 1'000'000;
  auto df = random_filter_grad<float>(10, 100, 100, 1.0 / 128, {99, 0, 0});
  REQUIRE(df.size() == std::size_t(n));
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    s += df.data[i];
    s2 += static_cast<double>(df.data[i]) * df.data[i];
  }
  const double mean = s / n;
  const double std = std::sqrt(s2 / n - mean * mean);
  REQUIRE(std::abs(mean) < 1e-3);
  REQUIRE(std == Catch::Approx(1.0 / 128).epsilon(0.01));
}

TEST_CASE("random filter grad has the requested shape") {
  auto df = random_filter_grad<float>(3, 2, 4, 0.5, {1, 2, 3});
  REQUIRE(df.size() == 72);
}

TEST_CASE("distinct layer streams are uncorrelated") {
  const int n = 100'000;
  auto a = random_filter_grad<float>(10, 100, 100, 1.0, {5, 0, 3});
  auto b = random_filter_grad<float>(10, 100, 100, 1.0, {5, 1, 3});
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (int i = 0; i < n; ++i) {
    sa += a.data[i];
    sb += b.data[i];
    saa += static_cast<double>(a.data[i]) * a.data[i];
    sbb += static_cast<double>(b.data[i]) * b.data[i];
    sab += static_cast<double>(a.data[i]) * b.data[i];
  }
  const double r = (sab / n - sa / n * sb / n) /
                   (std::sqrt(saa / n - sa / n * sa / n) * std::sqrt(sbb / n - sb / n * sb / n));
  REQUIRE(std::abs(r) < 0.01);
}

TEST_CASE("full method equals the dense baseline bit-for-bit") {
  std::mt19937_64 rng(71);
  std::normal_distribution<float> dist;
  Tensor4<float> in(2, 3, 5, 5), dout(2, 4, 5, 5);
  for (auto &v : in.data) v = dist(rng);
  for (auto &v : dout.data) v = dist(rng);
  auto a = compute_filter_grad(ApproxMethod::full(), in, dout, {3, 3, 4}, {1, 1}, {});
  auto b = conv2d_filter_grad_dense(in, dout, 3, {1, 1});
  REQUIRE(a.data == b.data);
}

TEST_CASE("topk method applies the batch-size scale after the kernel") {
  // kernels-module hand example scaled by 1/128
  Tensor4<float> in(1, 1, 2, 2);
  in.data = {1, 2, 3, 4};
  Tensor4<float> dout(1, 1, 2, 2);
  dout.data = {0.5f, -1.0f, 0.25f, 0.5f};
  auto df = compute_filter_grad(ApproxMethod::topk(1, 1.0 / 128), in, dout, {1, 1, 1}, {1, 0}, {});
  REQUIRE(df.layout == FilterLayout::KKCiCo);
  REQUIRE(df.data[0] == 0.00390625f);
}

TEST_CASE("topk with scale 1 and k 1 equals the kernel path exactly") {
  std::mt19937_64 rng(73);
  std::normal_distribution<float> dist;
  Tensor4<float> in(2, 3, 5, 5), dout(2, 4, 5, 5);
  for (auto &v : in.data) v = dist(rng);
  for (auto &v : dout.data) v = dist(rng);
  auto a = compute_filter_grad(ApproxMethod::topk(1, 1.0), in, dout, {3, 3, 4}, {1, 1}, {});
  auto b = transpose_filter(
      approx_filter_grad(transpose_activations(in, Layout::NHWC), dout, 3, 1),
      FilterLayout::KKCiCo);
  REQUIRE(a.data == b.data);
}

TEST_CASE("topk on a strided conv falls back to the dense path and records it") {
  std::mt19937_64 rng(79);
  std::normal_distribution<float> dist;
  Tensor4<float> in(1, 2, 5, 5), dout(1, 3, 3, 3);
  for (auto &v : in.data) v = dist(rng);
  for (auto &v : dout.data) v = dist(rng);
  auto &stats = KernelStats::instance();
  stats.reset();
  auto a = compute_filter_grad(ApproxMethod::topk(1, 1.0 / 128), in, dout, {3, 2, 3}, {2, 1}, {});
  auto b = conv2d_filter_grad_dense(in, dout, 3, {2, 1});
  REQUIRE(a.data == b.data);
  REQUIRE(stats.topk_stride_fallbacks == 1);
  REQUIRE(stats.topk_calls == 0);
}

TEST_CASE("method names serialize as lowercase strings") {
  REQUIRE(std::string(to_string(ApproxMethod::Kind::Full)) == "full");
  REQUIRE(std::string(to_string(ApproxMethod::Kind::TopK)) == "topk");
  REQUIRE(parse_method_kind("random") == ApproxMethod::Kind::Random);
  REQUIRE_THROWS_AS(parse_method_kind("bogus"), std::invalid_argument);
}
