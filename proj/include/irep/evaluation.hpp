#pragma once

#include <vector>

#include "irep/data.hpp"
#include "irep/reparam.hpp"
#include "irep/supernet.hpp"

namespace irep {

enum class EvalMode { multibranch, fused };

struct EvalReport {
  SubnetMask mask;
  double top1 = 0.0;
  double loss = 0.0;
  double wall_time_ms = 0.0;
  EvalMode mode = EvalMode::multibranch;
};

// Scores one subnet on a dataset. Fused mode re-parameterizes first; the
// timing includes that cost. Batches are materialized before the clock starts.
EvalReport evaluate(SuperNet& net, const SubnetMask& mask, const Dataset& data, EvalMode mode,
                    int batch_size = 128);

struct BenchResult {
  double t_multi_ms = 0.0;
  double t_fused_ms = 0.0;
  double accel_pct = 0.0;  // (t_multi - t_fused) / t_multi * 100
};

// Times multi-branch vs fused evaluation of a whole population; median of
// `runs` passes after one discarded warmup pass, pinned to one thread.
BenchResult bench_eval_speed(SuperNet& net, const std::vector<SubnetMask>& population,
                             const Dataset& data, int batch_size = 128, int runs = 5);

// Per-block sigmoid(alpha_a) - sigmoid(alpha_b) for a pair of candidate kinds.
std::vector<double> diff_matrix(const SuperNet& net, KernelKind a, KernelKind b);

// Refresh batchnorm running statistics by forwarding `batches` training
// batches in train mode (no gradients, no parameter updates).
void calibrate_bn(SuperNet& net, const Dataset& train, const SubnetMask& mask, int batch_size,
                  int batches, std::uint64_t order_seed);

}  // namespace irep
