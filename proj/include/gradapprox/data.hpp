#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradapprox/tensor.hpp"

namespace gradapprox {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor4<float> images;  // NCHW, normalized
  std::vector<int> labels;

  int count() const { return images.n; }
};

struct RawImages {
  int c = 0, h = 0, w = 0;
  std::vector<std::uint8_t> pixels;  // NCHW order
  std::vector<std::uint8_t> labels;

  int count() const { return static_cast<int>(labels.size()); }
};

struct ChannelStats {
  std::vector<double> mean, stddev;
};

// CIFAR-10 binary batch: 3073-byte records, 1 label byte then 3072
// channel-major pixel bytes.
inline void read_cifar_batch(const std::string &path, RawImages &out) {
  constexpr std::size_t record = 3073;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes == 0 || bytes % record != 0)
    throw DataError(path + ": size " + std::to_string(bytes) +
                    " is not a multiple of the 3073-byte record");
  const std::size_t n = bytes / record;
  out.c = 3;
  out.h = out.w = 32;
  std::vector<std::uint8_t> buf(record);
  for (std::size_t i = 0; i < n; ++i) {
    if (!in.read(reinterpret_cast<char *>(buf.data()), record))
      throw DataError(path + ": truncated read at record " + std::to_string(i));
    out.labels.push_back(buf[0]);
    out.pixels.insert(out.pixels.end(), buf.begin() + 1, buf.end());
  }
}

inline ChannelStats compute_stats(const RawImages &r) {
  ChannelStats st;
  st.mean.assign(r.c, 0.0);
  st.stddev.assign(r.c, 0.0);
  const std::size_t plane = static_cast<std::size_t>(r.h) * r.w;
  const std::size_t n = r.labels.size();
  for (int ch = 0; ch < r.c; ++ch) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t *p = r.pixels.data() + (i * r.c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        const double v = p[q] / 255.0;
        s += v;
        s2 += v * v;
      }
    }
    const double m = s / (n * plane);
    st.mean[ch] = m;
    st.stddev[ch] = std::sqrt(std::max(s2 / (n * plane) - m * m, 1e-12));
  }
  return st;
}

inline Dataset normalize(const RawImages &r, const ChannelStats &st) {
  Dataset d;
  d.images = Tensor4<float>(r.count(), r.c, r.h, r.w, Layout::NCHW);
  const std::size_t plane = static_cast<std::size_t>(r.h) * r.w;
  for (int i = 0; i < r.count(); ++i)
    for (int ch = 0; ch < r.c; ++ch) {
      const std::uint8_t *p = r.pixels.data() + (static_cast<std::size_t>(i) * r.c + ch) * plane;
      float *q = d.images.data.data() + (static_cast<std::size_t>(i) * r.c + ch) * plane;
      const float m = static_cast<float>(st.mean[ch]);
      const float inv = static_cast<float>(1.0 / st.stddev[ch]);
      for (std::size_t t = 0; t < plane; ++t) q[t] = (p[t] / 255.0f - m) * inv;
    }
  d.labels.assign(r.labels.begin(), r.labels.end());
  return d;
}

// 50,000 train / 10,000 test images; normalization statistics come from the
// train split and are reused for test.
inline std::pair<Dataset, Dataset> load_cifar10(const std::string &dir) {
  RawImages train, test;
  for (int b = 1; b <= 5; ++b)
    read_cifar_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", train);
  read_cifar_batch(dir + "/test_batch.bin", test);
  const ChannelStats st = compute_stats(train);
  return {normalize(train, st), normalize(test, st)};
}

namespace detail {

inline std::uint32_t read_be32(std::ifstream &in, const std::string &path) {
  std::uint8_t b[4];
  if (!in.read(reinterpret_cast<char *>(b), 4)) throw DataError(path + ": truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | b[3];
}

}  // namespace detail

// MNIST IDX pair (big-endian magic/dims header).
inline std::pair<Dataset, Dataset> load_mnist(const std::string &dir) {
  auto read_split = [](const std::string &img_path, const std::string &lbl_path) {
    std::ifstream im(img_path, std::ios::binary), lb(lbl_path, std::ios::binary);
    if (!im) throw DataError("cannot open " + img_path);
    if (!lb) throw DataError("cannot open " + lbl_path);
    if (detail::read_be32(im, img_path) != 2051) throw DataError(img_path + ": bad magic");
    if (detail::read_be32(lb, lbl_path) != 2049) throw DataError(lbl_path + ": bad magic");
    const std::uint32_t n = detail::read_be32(im, img_path);
    const std::uint32_t h = detail::read_be32(im, img_path);
    const std::uint32_t w = detail::read_be32(im, img_path);
    if (detail::read_be32(lb, lbl_path) != n)
      throw DataError(lbl_path + ": label count does not match image count");
    RawImages r;
    r.c = 1;
    r.h = static_cast<int>(h);
    r.w = static_cast<int>(w);
    r.pixels.resize(static_cast<std::size_t>(n) * h * w);
    r.labels.resize(n);
    if (!im.read(reinterpret_cast<char *>(r.pixels.data()), r.pixels.size()))
      throw DataError(img_path + ": truncated pixel data");
    if (!lb.read(reinterpret_cast<char *>(r.labels.data()), r.labels.size()))
      throw DataError(lbl_path + ": truncated label data");
    return r;
  };
  RawImages train = read_split(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
  RawImages test = read_split(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
  const ChannelStats st = compute_stats(train);
  return {normalize(train, st), normalize(test, st)};
}

// Synthetic CIFAR-shaped dataset: per-class smooth templates plus noise and
// random shifts. Stands in for the real corpus where no dataset is
// available; same record layout and normalization path as CIFAR-10.
inline std::pair<Dataset, Dataset> make_synthetic_cifar(int n_train, int n_test,
                                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xbb67ae8584caa73bULL);
  constexpr int grid = 8, hw = 32, classes = 10;
  std::vector<double> templates(static_cast<std::size_t>(classes) * 3 * grid * grid);
  std::uniform_real_distribution<double> uni(0.15, 0.85);
  for (auto &v : templates) v = uni(rng);

  auto render = [&](RawImages &out, int n) {
    out.c = 3;
    out.h = out.w = hw;
    std::normal_distribution<double> noise(0.0, 0.12);
    std::uniform_int_distribution<int> cls(0, classes - 1), shift(-3, 3);
    for (int i = 0; i < n; ++i) {
      const int y = cls(rng);
      const int dr = shift(rng), dc = shift(rng);
      out.labels.push_back(static_cast<std::uint8_t>(y));
      for (int ch = 0; ch < 3; ++ch) {
        const double *t = templates.data() + (static_cast<std::size_t>(y) * 3 + ch) * grid * grid;
        for (int r = 0; r < hw; ++r)
          for (int c = 0; c < hw; ++c) {
            // bilinear sample of the coarse template at a shifted position
            const double fr = std::clamp((r + dr) / double(hw) * (grid - 1), 0.0, grid - 1.0);
            const double fc = std::clamp((c + dc) / double(hw) * (grid - 1), 0.0, grid - 1.0);
            const int r0 = static_cast<int>(fr), c0 = static_cast<int>(fc);
            const int r1 = std::min(r0 + 1, grid - 1), c1 = std::min(c0 + 1, grid - 1);
            const double ar = fr - r0, ac = fc - c0;
            double v = (1 - ar) * ((1 - ac) * t[r0 * grid + c0] + ac * t[r0 * grid + c1]) +
                       ar * ((1 - ac) * t[r1 * grid + c0] + ac * t[r1 * grid + c1]);
            v += noise(rng);
            out.pixels.push_back(static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0));
          }
      }
    }
  };

  RawImages train, test;
  render(train, n_train);
  render(test, n_test);
  const ChannelStats st = compute_stats(train);
  return {normalize(train, st), normalize(test, st)};
}

// Seeded epoch shuffling over an optional subset; the final partial batch is
// dropped so every delivered batch has the configured size.
class Batcher {
 public:
  Batcher(int dataset_size, int batch_size, std::uint64_t seed, int subset = 0)
      : batch_size_(batch_size), seed_(seed) {
    if (batch_size < 1) throw std::invalid_argument("batcher: batch size must be >= 1");
    indices_.resize(dataset_size);
    std::iota(indices_.begin(), indices_.end(), 0);
    if (subset > 0 && subset < dataset_size) {
      std::mt19937_64 rng(seed ^ 0x3c6ef372fe94f82bULL);
      std::shuffle(indices_.begin(), indices_.end(), rng);
      indices_.resize(subset);
    }
    if (batch_size > static_cast<int>(indices_.size()))
      throw std::invalid_argument("batcher: batch size exceeds retained samples");
  }

  int num_batches() const { return static_cast<int>(indices_.size()) / batch_size_; }
  int retained() const { return static_cast<int>(indices_.size()); }

  void shuffle_epoch(int epoch) {
    std::mt19937_64 rng(seed_ + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1));
    std::shuffle(indices_.begin(), indices_.end(), rng);
  }

  std::vector<int> batch_indices(int b) const {
    return {indices_.begin() + static_cast<std::size_t>(b) * batch_size_,
            indices_.begin() + static_cast<std::size_t>(b + 1) * batch_size_};
  }

 private:
  int batch_size_;
  std::uint64_t seed_;
  std::vector<int> indices_;
};

inline std::pair<Tensor4<float>, std::vector<int>> gather(const Dataset &d,
                                                          const std::vector<int> &idx) {
  const int c = d.images.c, h = d.images.h, w = d.images.w;
  Tensor4<float> batch(static_cast<int>(idx.size()), c, h, w, Layout::NCHW);
  std::vector<int> labels(idx.size());
  const std::size_t img = static_cast<std::size_t>(c) * h * w;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(d.images.data.data() + static_cast<std::size_t>(idx[i]) * img, img,
                batch.data.data() + i * img);
    labels[i] = d.labels[idx[i]];
  }
  return {std::move(batch), std::move(labels)};
}

}  // namespace gradapprox
