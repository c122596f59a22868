#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "irep/data.hpp"
#include "irep/optim.hpp"
#include "irep/rng.hpp"
#include "irep/supernet.hpp"

namespace irep {

struct SearchConfig {
  int population_size = 16;          // P
  int subnet_batch = 2;              // B subnets averaged per step
  double budget_ratio = 2.0 / 3.0;   // C = floor(ratio * total_branches)
  int warmup_epochs = 1;
  int evolution_rounds = 4;
  int param_epochs_per_round = 1;
  double p_mut = 0.5;                // probability the mutation operator fires
  double p_cross = 0.5;              // probability the crossover operator fires
  double p_bit = 0.0;                // per-bit flip probability; 0 = 1/total_branches
  double lr_w = 0.1;                 // SGD, cosine-decayed over all epochs
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_arch = 1e-4;             // Adam on alpha, beta
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int batch_size = 64;
  int eval_batch = 128;
  double parent_fraction = 0.5;
  double variation_fraction = 0.25;
  int calib_batches = 4;             // refresh of BN stats before final export
  std::string strategy = "des";      // "des" or "random" (uniform offspring)
  std::uint64_t seed = 0;
};

enum class Origin : int { parent = 0, variation = 1, importance = 2 };

struct Individual {
  SubnetMask mask;
  double fitness = -1.0;  // val top-1 in [0,1]; negative = not evaluated yet
  Origin origin = Origin::importance;

  bool evaluated() const { return fitness >= 0.0; }
};

using Population = std::vector<Individual>;

struct EpochRecord {
  int round = 0;  // 0 during warmup
  int epoch = 0;  // global 1-based epoch counter
  double train_loss = 0.0;
  double best_top1 = 0.0;
  double mean_sigmoid_alpha = 0.0;
  double mean_sigmoid_beta = 0.0;
  double active_branch_mean = 0.0;
  double wall_s = 0.0;
};

class ProgressSink {
 public:
  virtual ~ProgressSink() = default;
  virtual void on_epoch(const EpochRecord& record) = 0;
};

// Everything a checkpoint captures; resuming from a round boundary with this
// state reproduces the uninterrupted run bitwise.
struct SearchState {
  SuperNet net;
  SearchConfig cfg;
  Sgd sgd;
  Adam adam;
  Rng rng;
  Population population;
  int budget = 0;          // C
  int epoch = 0;           // completed epochs (global)
  int round = 0;           // completed evolution rounds
  bool initialized = false;

  std::vector<TensorPtr> omega;  // cached registry order
  std::vector<TensorPtr> arch;
};

SearchState init_search(SuperNet net, const SearchConfig& cfg);

// Eq.-style perturbation interval: (sig(a0) - max sig(a), sig(a0) - min sig(a)).
// An all-equal vector yields the empty interval, which draws zero noise.
std::pair<double, double> perturbation_range(const std::vector<double>& raw, double raw0);

// Top-C global selection of (sig(beta_i) + noise_b) * (sig(alpha_io) + noise_a)
// with independent per-entry draws; ties keep the lower global index.
SubnetMask importance_sample(const SuperNet& net, int budget, Rng& rng);

// The zero-noise scores sig(beta_i) * sig(alpha_io) and their top-C mask;
// also the scoring used by budget repair.
std::vector<double> importance_scores(const SuperNet& net);
SubnetMask importance_sample_deterministic(const SuperNet& net, int budget);

SubnetMask mutate(const SubnetMask& mask, double p_mut, double p_bit, Rng& rng);
SubnetMask crossover(const SubnetMask& a, const SubnetMask& b, double p_cross, Rng& rng);

// Drops the lowest-scoring active bits (noise-free importance score) until
// the budget holds.
SubnetMask repair_to_budget(const SubnetMask& mask, const SuperNet& net, int budget);

// One optimization step on a minibatch: ordered accumulation of the sampled
// subnets' gradients, averaged, then one SGD step on omega and one Adam step
// on (alpha, beta). Returns the mean subnet loss.
double train_step(SearchState& st, const Batch& batch, const std::vector<int>& sampled);

// Gradient part of train_step only (used by the equivalence tests).
double accumulate_batched_gradient(SearchState& st, const Batch& batch,
                                   const std::vector<int>& sampled);

// Warmup + evolution rounds, resumable from the state's counters.
// on_round fires after warmup (round 0) and after every completed round;
// returning false stops the run early (simulated interrupt).
void run_search(SearchState& st, const DataBundle& data, ProgressSink* sink,
                const std::function<bool(const SearchState&)>& on_round = {});

// Algorithm wrapper: fresh state, full run, population sorted by fitness.
Population evolve(SuperNet& net, const DataBundle& data, const SearchConfig& cfg,
                  ProgressSink* sink = nullptr);

const Individual& best_individual(const Population& pop);

}  // namespace irep
