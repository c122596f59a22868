#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "irep/autodiff.hpp"
#include "irep/reparam.hpp"
#include "irep/rng.hpp"
#include "irep/tensor.hpp"

namespace irep {

// Binary code over all candidate branches of a SuperNet; bit order follows
// block order, then candidate order within the block.
struct SubnetMask {
  std::vector<std::uint8_t> bits;

  static SubnetMask zeros(int n) { return {std::vector<std::uint8_t>(n, 0)}; }
  static SubnetMask ones(int n) { return {std::vector<std::uint8_t>(n, 1)}; }
  static SubnetMask from_string(const std::string& s);

  int size() const { return static_cast<int>(bits.size()); }
  int popcount() const;
  std::string to_string() const;
  bool operator==(const SubnetMask&) const = default;
};

struct Candidate {
  KernelKind kind;
  ConvParams conv;                   // absent for the identity kind
  BNParams bn;
  std::optional<ConvParams> conv2;   // second stage of seq1x1_3x3
  std::optional<BNParams> bn2;
  TensorPtr alpha;                   // (1,1,1,1) raw gate parameter
};

// One searched layer: a fixed 3x3 Conv-BN plus a gated candidate set.
struct BlockSpec {
  int in_ch = 0, out_ch = 0, stride = 1;
  ConvParams fixed;
  BNParams fixed_bn;
  std::vector<Candidate> candidates;
  TensorPtr beta;                    // (1,1,1,1)
};

// Flat layer program; residual topology is expressed with save/add slots.
struct Layer {
  enum class Op { block, relu, pool2, transition, global_pool, head, save, add_saved };
  Op op = Op::relu;
  int index = 0;      // block index, or save/add slot
  ConvParams conv;    // transition and head weights
};

enum class ArchKind { vgg_small, resnet_small, custom };

struct NetConfig {
  ArchKind arch = ArchKind::vgg_small;
  // vgg/custom: one width per block; resnet: one width per two-block unit
  std::vector<int> widths = {16, 16, 16, 16};
  int classes = 4;
  int in_channels = 3;
  // 0 keeps the full candidate list; otherwise the first n kinds
  int max_candidates = 0;
  std::uint64_t init_seed = 0;
};

struct SuperNet {
  NetConfig config;
  std::vector<BlockSpec> blocks;
  std::vector<Layer> layers;
  int total_branches = 0;
  std::vector<int> branch_offset;   // per-block start bit, plus total at the end

  void set_train(bool train);
  bool bn_stats_ready() const;
  void mark_bn_stats_ready();

  // registries in fixed declaration order; names are stable across runs
  std::vector<std::pair<std::string, TensorPtr>> weight_params() const;  // omega
  std::vector<std::pair<std::string, TensorPtr>> arch_params() const;    // alpha, beta
  std::vector<std::pair<std::string, std::vector<double>*>> bn_buffers();

  std::vector<double> alpha_values() const;  // raw alpha per branch, mask bit order
  std::vector<double> beta_values() const;   // raw beta per block
};

SuperNet build_supernet(const NetConfig& cfg);

// sigmoid(beta) * sum_active sigmoid(alpha_o) * f_o(x) + F(x); inactive
// branches are skipped entirely and receive no gradient.
TensorPtr block_forward(BlockSpec& block, const TensorPtr& x,
                        std::span<const std::uint8_t> mask_bits, Tape* tape);

TensorPtr supernet_forward(SuperNet& net, const TensorPtr& x, const SubnetMask& mask,
                           Tape* tape);

// mask <-> per-block bit slices; offsets are prefix sums of candidate counts
std::vector<std::vector<std::uint8_t>> split_mask(const SuperNet& net, const SubnetMask& mask);
SubnetMask join_mask(const SuperNet& net, const std::vector<std::vector<std::uint8_t>>& slices);

// Single-branch network produced by re-parameterization: convolutions,
// activations and pooling only.
struct PlainLayer {
  enum class Op { conv, relu, pool2, global_pool, save, add_saved };
  Op op = Op::relu;
  int index = 0;
  ConvParams conv;
};

struct PlainNet {
  int in_channels = 0;
  int classes = 0;
  std::vector<PlainLayer> layers;

  TensorPtr forward(const TensorPtr& x) const;
  long long param_count() const;
};

}  // namespace irep
