#include "irep/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "irep/errors.hpp"
#include "irep/rng.hpp"

namespace irep {

namespace {

double frac(double v) { return v - std::floor(v); }

// pattern value in [0, 1] at pixel (y, x)
double pattern_value(int cls, int y, int x, int size, double a, double b, double c) {
  const double pi2 = 6.283185307179586;
  const double s = static_cast<double>(size);
  switch (cls % 4) {
    case 0: {  // oriented bars: stripes along a class-variant angle
      const double theta = 0.35 + 0.5 * a;
      const double f = 2.0 + (cls / 4) + b;
      const double t = (x * std::cos(theta) + y * std::sin(theta)) / s;
      return 0.5 + 0.5 * std::sin(pi2 * (f * t + c));
    }
    case 1: {  // cross centered at (cy, cx)
      const double cy = s * (0.35 + 0.3 * a), cx = s * (0.35 + 0.3 * b);
      const double arm = s * (0.08 + 0.04 * c);
      const bool on = std::abs(y - cy) < arm || std::abs(x - cx) < arm;
      return on ? 0.9 : 0.1;
    }
    case 2: {  // ring
      const double cy = s * (0.4 + 0.2 * a), cx = s * (0.4 + 0.2 * b);
      const double r = s * (0.22 + 0.08 * c) / (1.0 + 0.5 * (cls / 4));
      const double d = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
      return std::abs(d - r) < s * 0.07 ? 0.9 : 0.1;
    }
    default: {  // checkers
      const double cell = s / (3.0 + 2.0 * (cls / 4) + b);
      const int u = static_cast<int>(std::floor((y + a * cell) / cell));
      const int v = static_cast<int>(std::floor((x + c * cell) / cell));
      return ((u + v) & 1) ? 0.85 : 0.15;
    }
  }
}

Dataset take_subset(const Dataset& src, const std::vector<int>& idx, Split split) {
  Dataset out;
  out.c = src.c;
  out.h = src.h;
  out.w = src.w;
  out.n = static_cast<int>(idx.size());
  out.class_count = src.class_count;
  out.split = split;
  const long long sz = src.image_size();
  out.images.resize(static_cast<std::size_t>(out.n) * sz);
  out.labels.resize(out.n);
  for (int i = 0; i < out.n; ++i) {
    std::copy_n(src.images.begin() + idx[i] * sz, sz, out.images.begin() + 1LL * i * sz);
    out.labels[i] = src.labels[idx[i]];
  }
  return out;
}

}  // namespace

DataBundle synth_generate(const SynthSpec& spec) {
  if (spec.size < 8) throw UsageError("synth: image size must be >= 8");
  if (spec.classes < 2) throw UsageError("synth: need at least 2 classes");
  if (spec.per_class < 2) throw UsageError("synth: need at least 2 images per class");
  if (spec.channels < 1) throw UsageError("synth: bad channel count");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw UsageError("synth: train_fraction must be in (0, 1)");
  }

  Dataset all;
  all.n = spec.classes * spec.per_class;
  all.c = spec.channels;
  all.h = spec.size;
  all.w = spec.size;
  all.class_count = spec.classes;
  all.images.resize(static_cast<std::size_t>(all.n) * all.image_size());
  all.labels.resize(all.n);

  Rng rng(spec.seed);
  const long long plane = 1LL * spec.size * spec.size;
  int img = 0;
  for (int cls = 0; cls < spec.classes; ++cls) {
    for (int rep = 0; rep < spec.per_class; ++rep, ++img) {
      const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
      all.labels[img] = cls;
      double* base = all.images.data() + 1LL * img * all.image_size();
      for (int ch = 0; ch < spec.channels; ++ch) {
        const double tint = 0.55 + 0.45 * frac((cls * spec.channels + ch + 1) * 0.618033988749895);
        double* p = base + ch * plane;
        for (int y = 0; y < spec.size; ++y) {
          for (int x = 0; x < spec.size; ++x) {
            double v = tint * pattern_value(cls, y, x, spec.size, a, b, c);
            v += spec.noise * (2.0 * rng.uniform() - 1.0);
            p[1LL * y * spec.size + x] = std::clamp(v, 0.0, 1.0);
          }
        }
      }
    }
  }
  return split_and_standardize(all, spec.train_fraction, rng.next_u64());
}

DataBundle split_and_standardize(const Dataset& raw, double train_fraction,
                                 std::uint64_t seed) {
  std::vector<std::vector<int>> per_class(raw.class_count);
  for (int i = 0; i < raw.n; ++i) per_class[raw.labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<int> train_idx, val_idx;
  for (auto& idx : per_class) {
    rng.shuffle(idx);
    const int n_train = static_cast<int>(std::floor(train_fraction * idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (static_cast<int>(i) < n_train ? train_idx : val_idx).push_back(idx[i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  DataBundle out;
  out.train = take_subset(raw, train_idx, Split::train);
  out.val = take_subset(raw, val_idx, Split::val);
  auto [mean, std] = compute_channel_stats(out.train);
  standardize(out.train, mean, std);
  standardize(out.val, mean, std);
  return out;
}

std::pair<std::vector<double>, std::vector<double>> compute_channel_stats(const Dataset& ds) {
  std::vector<double> mean(ds.c, 0.0), std(ds.c, 1.0);
  const long long plane = 1LL * ds.h * ds.w;
  const long long m = 1LL * ds.n * plane;
  if (m == 0) return {mean, std};
  for (int c = 0; c < ds.c; ++c) {
    double s = 0.0;
    for (int i = 0; i < ds.n; ++i) {
      const double* p = ds.images.data() + (1LL * i * ds.c + c) * plane;
      for (long long k = 0; k < plane; ++k) s += p[k];
    }
    mean[c] = s / static_cast<double>(m);
    double v = 0.0;
    for (int i = 0; i < ds.n; ++i) {
      const double* p = ds.images.data() + (1LL * i * ds.c + c) * plane;
      for (long long k = 0; k < plane; ++k) {
        const double d = p[k] - mean[c];
        v += d * d;
      }
    }
    std[c] = std::sqrt(v / static_cast<double>(m));
    if (std[c] < 1e-12) std[c] = 1.0;
  }
  return {mean, std};
}

void standardize(Dataset& ds, const std::vector<double>& mean, const std::vector<double>& std) {
  const long long plane = 1LL * ds.h * ds.w;
  for (int i = 0; i < ds.n; ++i) {
    for (int c = 0; c < ds.c; ++c) {
      double* p = ds.images.data() + (1LL * i * ds.c + c) * plane;
      for (long long k = 0; k < plane; ++k) p[k] = (p[k] - mean[c]) / std[c];
    }
  }
  ds.channel_mean = mean;
  ds.channel_std = std;
}

Dataset read_binary_dataset(const std::string& path, int class_count, int channels,
                            int height, int width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file: " + path);
  in.seekg(0, std::ios::end);
  const long long size = in.tellg();
  in.seekg(0);
  const long long record = 1LL + 1LL * channels * height * width;
  if (size % record != 0) {
    throw DataError("truncated dataset file: " + path + " (" + std::to_string(size) +
                    " bytes is not a multiple of " + std::to_string(record) + ")");
  }
  Dataset ds;
  ds.n = static_cast<int>(size / record);
  ds.c = channels;
  ds.h = height;
  ds.w = width;
  ds.class_count = class_count;
  ds.split = Split::test;
  ds.images.resize(static_cast<std::size_t>(ds.n) * ds.image_size());
  ds.labels.resize(ds.n);
  std::vector<unsigned char> buf(static_cast<std::size_t>(record));
  for (int i = 0; i < ds.n; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), record);
    if (!in) throw DataError("truncated dataset file: " + path);
    if (buf[0] >= class_count) {
      throw DataError("record " + std::to_string(i) + ": label " + std::to_string(buf[0]) +
                      " out of range for " + std::to_string(class_count) + " classes");
    }
    ds.labels[i] = buf[0];
    double* p = ds.images.data() + 1LL * i * ds.image_size();
    for (long long k = 0; k < record - 1; ++k) p[k] = buf[k + 1] / 255.0;
  }
  return ds;
}

void write_binary_dataset(const std::string& path, const Dataset& raw) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file: " + path);
  std::vector<unsigned char> buf;
  const long long sz = raw.image_size();
  buf.resize(static_cast<std::size_t>(sz) + 1);
  for (int i = 0; i < raw.n; ++i) {
    buf[0] = static_cast<unsigned char>(raw.labels[i]);
    const double* p = raw.images.data() + 1LL * i * sz;
    for (long long k = 0; k < sz; ++k) {
      buf[k + 1] = static_cast<unsigned char>(std::lround(std::clamp(p[k], 0.0, 1.0) * 255.0));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw DataError("short write to dataset file: " + path);
}

Batches::Batches(const Dataset& ds, int batch_size) : ds_(&ds), bs_(batch_size) {
  if (batch_size < 1) throw UsageError("batches: batch size must be >= 1");
  order_.resize(ds.n);
  std::iota(order_.begin(), order_.end(), 0);
}

Batches::Batches(const Dataset& ds, int batch_size, std::uint64_t shuffle_seed)
    : Batches(ds, batch_size) {
  Rng rng(shuffle_seed);
  rng.shuffle(order_);
}

Batches Batches::sequential(const Dataset& ds, int batch_size) {
  return Batches(ds, batch_size);
}

std::size_t Batches::size() const {
  return static_cast<std::size_t>((ds_->n + bs_ - 1) / bs_);
}

Batch Batches::get(std::size_t i) const {
  const int lo = static_cast<int>(i) * bs_;
  const int hi = std::min(ds_->n, lo + bs_);
  if (lo >= hi) throw std::out_of_range("batches: index out of range");
  Batch b;
  const long long sz = ds_->image_size();
  b.images = Tensor::create({hi - lo, ds_->c, ds_->h, ds_->w}, false);
  b.labels.resize(hi - lo);
  for (int k = lo; k < hi; ++k) {
    std::copy_n(ds_->images.begin() + 1LL * order_[k] * sz, sz,
                b.images->data.begin() + 1LL * (k - lo) * sz);
    b.labels[k - lo] = ds_->labels[order_[k]];
  }
  return b;
}

}  // namespace irep
