#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irep/tensor.hpp"

namespace irep {

enum class Split { train, val, test };

struct Dataset {
  std::vector<double> images;       // N*C*H*W, row-major, standardized
  std::vector<int> labels;
  int n = 0, c = 0, h = 0, w = 0;
  int class_count = 0;
  Split split = Split::train;
  // per-channel statistics the images were standardized with (train-split stats)
  std::vector<double> channel_mean, channel_std;

  bool empty() const { return n == 0; }
  long long image_size() const { return 1LL * c * h * w; }
};

struct SynthSpec {
  int classes = 4;
  int per_class = 600;
  int size = 32;
  int channels = 3;
  double noise = 0.15;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct DataBundle {
  Dataset train, val;
};

// Deterministic class-conditional patterns (bars, crosses, rings, checkers)
// with additive noise; stratified train/val split, standardized with
// train-split channel statistics.
DataBundle synth_generate(const SynthSpec& spec);

// Fixed-length records: 1 label byte + c*h*w pixel bytes, channel-major.
// Returns raw [0,1]-scaled images; standardization is the caller's step.
Dataset read_binary_dataset(const std::string& path, int class_count = 10, int channels = 3,
                            int height = 32, int width = 32);
void write_binary_dataset(const std::string& path, const Dataset& raw);

// Stratified split of a raw dataset, then standardization by train stats.
DataBundle split_and_standardize(const Dataset& raw, double train_fraction,
                                 std::uint64_t seed);

std::pair<std::vector<double>, std::vector<double>> compute_channel_stats(const Dataset& ds);
void standardize(Dataset& ds, const std::vector<double>& mean, const std::vector<double>& std);

struct Batch {
  TensorPtr images;
  std::vector<int> labels;
};

// Deterministic epoch permutation derived from the shuffle seed; the last
// partial batch is kept.
class Batches {
 public:
  Batches(const Dataset& ds, int batch_size, std::uint64_t shuffle_seed);
  static Batches sequential(const Dataset& ds, int batch_size);

  std::size_t size() const;
  Batch get(std::size_t i) const;

 private:
  Batches(const Dataset& ds, int batch_size);
  const Dataset* ds_;
  int bs_;
  std::vector<int> order_;
};

}  // namespace irep
