#include "irep/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "irep/errors.hpp"
#include "irep/evaluation.hpp"

namespace irep {

namespace {

constexpr double kPi = 3.141592653589793;

SubnetMask top_c_mask(const std::vector<double>& scores, int budget) {
  const int n = static_cast<int>(scores.size());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  SubnetMask mask = SubnetMask::zeros(n);
  for (int i = 0; i < std::min(budget, n); ++i) mask.bits[idx[i]] = 1;
  return mask;
}

SubnetMask random_budget_mask(int total, int budget, Rng& rng) {
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  SubnetMask mask = SubnetMask::zeros(total);
  for (int i = 0; i < std::min(budget, total); ++i) mask.bits[idx[i]] = 1;
  return mask;
}

double cosine_lr(double base, int epoch, int total_epochs) {
  if (total_epochs <= 1) return base;
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return base * 0.5 * (1.0 + std::cos(kPi * t));
}

double mean_sigmoid(const std::vector<double>& raw) {
  if (raw.empty()) return 0.0;
  double s = 0.0;
  for (double v : raw) s += sigmoid_value(v);
  return s / static_cast<double>(raw.size());
}

}  // namespace

SearchState init_search(SuperNet net, const SearchConfig& cfg) {
  if (cfg.population_size < 1) throw UsageError("search: population_size must be >= 1");
  if (cfg.subnet_batch < 1 || cfg.subnet_batch > cfg.population_size) {
    throw UsageError("search: subnet_batch must be in [1, population_size]");
  }
  if (!(cfg.budget_ratio > 0.0 && cfg.budget_ratio <= 1.0)) {
    throw UsageError("search: budget_ratio must be in (0, 1]");
  }
  if (cfg.strategy != "des" && cfg.strategy != "random") {
    throw UsageError("search: unknown strategy '" + cfg.strategy + "'");
  }
  SearchState st{std::move(net),
                 cfg,
                 Sgd(cfg.lr_w, cfg.sgd_momentum, cfg.weight_decay),
                 Adam(cfg.lr_arch, cfg.adam_beta1, cfg.adam_beta2),
                 Rng(cfg.seed)};
  st.budget = static_cast<int>(std::floor(cfg.budget_ratio * st.net.total_branches));
  for (auto& [name, t] : st.net.weight_params()) st.omega.push_back(t);
  for (auto& [name, t] : st.net.arch_params()) st.arch.push_back(t);

  st.population.reserve(cfg.population_size);
  if (cfg.strategy == "des") {
    // seed one noise-free top-C individual (all gates equal at init, so this
    // is the lowest-index mask); the rest are random for diversity
    st.population.push_back({importance_sample(st.net, st.budget, st.rng), -1.0,
                             Origin::importance});
  }
  while (static_cast<int>(st.population.size()) < cfg.population_size) {
    st.population.push_back({random_budget_mask(st.net.total_branches, st.budget, st.rng),
                             -1.0, Origin::importance});
  }
  st.initialized = true;
  return st;
}

std::pair<double, double> perturbation_range(const std::vector<double>& raw, double raw0) {
  if (raw.empty()) return {0.0, 0.0};
  double mx = sigmoid_value(raw[0]), mn = mx;
  for (double v : raw) {
    const double s = sigmoid_value(v);
    mx = std::max(mx, s);
    mn = std::min(mn, s);
  }
  const double s0 = sigmoid_value(raw0);
  return {s0 - mx, s0 - mn};
}

std::vector<double> importance_scores(const SuperNet& net) {
  std::vector<double> scores;
  scores.reserve(net.total_branches);
  for (const BlockSpec& b : net.blocks) {
    const double bg = sigmoid_value(b.beta->data[0]);
    for (const Candidate& c : b.candidates) {
      scores.push_back(bg * sigmoid_value(c.alpha->data[0]));
    }
  }
  return scores;
}

SubnetMask importance_sample_deterministic(const SuperNet& net, int budget) {
  return top_c_mask(importance_scores(net), budget);
}

SubnetMask importance_sample(const SuperNet& net, int budget, Rng& rng) {
  const auto range_a = perturbation_range(net.alpha_values(), 0.0);
  const auto range_b = perturbation_range(net.beta_values(), 0.0);
  auto draw = [&rng](const std::pair<double, double>& r) {
    if (r.first == r.second) return 0.0;  // empty range, zero noise
    return rng.uniform(r.first, r.second);
  };
  std::vector<double> scores;
  scores.reserve(net.total_branches);
  for (const BlockSpec& b : net.blocks) {
    const double bg = sigmoid_value(b.beta->data[0]) + draw(range_b);
    for (const Candidate& c : b.candidates) {
      scores.push_back(bg * (sigmoid_value(c.alpha->data[0]) + draw(range_a)));
    }
  }
  return top_c_mask(scores, budget);
}

SubnetMask mutate(const SubnetMask& mask, double p_mut, double p_bit, Rng& rng) {
  SubnetMask out = mask;
  if (rng.uniform() >= p_mut) return out;
  if (p_bit <= 0.0) p_bit = 1.0 / std::max<std::size_t>(1, mask.bits.size());
  for (std::uint8_t& b : out.bits) {
    if (rng.uniform() < p_bit) b ^= 1;
  }
  return out;
}

SubnetMask crossover(const SubnetMask& a, const SubnetMask& b, double p_cross, Rng& rng) {
  if (a.bits.size() != b.bits.size()) {
    throw std::invalid_argument("crossover: parent masks differ in length");
  }
  SubnetMask out = a;
  if (rng.uniform() >= p_cross) return out;
  for (std::size_t i = 0; i < out.bits.size(); ++i) {
    if (rng.uniform() < 0.5) out.bits[i] = b.bits[i];
  }
  return out;
}

SubnetMask repair_to_budget(const SubnetMask& mask, const SuperNet& net, int budget) {
  int over = mask.popcount() - budget;
  if (over <= 0) return mask;
  const std::vector<double> scores = importance_scores(net);
  std::vector<int> active;
  for (int i = 0; i < mask.size(); ++i) {
    if (mask.bits[i]) active.push_back(i);
  }
  // drop the weakest first; among equals, the higher index goes first so the
  // kept set matches the top-C tie-break
  std::stable_sort(active.begin(), active.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return a > b;
  });
  SubnetMask out = mask;
  for (int k = 0; k < over; ++k) out.bits[active[k]] = 0;
  return out;
}

double accumulate_batched_gradient(SearchState& st, const Batch& batch,
                                   const std::vector<int>& sampled) {
  const int B = static_cast<int>(sampled.size());
  if (B < 1) throw UsageError("train_step: empty subnet sample");
  for (int idx : sampled) {
    if (idx < 0 || idx >= static_cast<int>(st.population.size())) {
      throw UsageError("train_step: sampled index out of range");
    }
  }
  for (const TensorPtr& p : st.omega) p->zero_grad();
  for (const TensorPtr& p : st.arch) p->zero_grad();
  double loss_sum = 0.0;
  for (int idx : sampled) {
    Tape tape;
    TensorPtr logits = supernet_forward(st.net, batch.images, st.population[idx].mask, &tape);
    TensorPtr loss = softmax_xent(logits, batch.labels, &tape);
    if (!std::isfinite(loss->item())) {
      throw NumericError("train_step: non-finite loss");
    }
    loss_sum += loss->item();
    tape.backward(loss);
  }
  if (B > 1) {
    const double inv = 1.0 / static_cast<double>(B);
    for (const TensorPtr& p : st.omega) {
      for (double& g : p->grad) g *= inv;
    }
    for (const TensorPtr& p : st.arch) {
      for (double& g : p->grad) g *= inv;
    }
  }
  return loss_sum / B;
}

double train_step(SearchState& st, const Batch& batch, const std::vector<int>& sampled) {
  if (static_cast<int>(sampled.size()) > static_cast<int>(st.population.size())) {
    throw UsageError("train_step: subnet batch exceeds population size");
  }
  const double loss = accumulate_batched_gradient(st, batch, sampled);
  st.sgd.step(st.omega);
  st.adam.step(st.arch);
  return loss;
}

namespace {

std::vector<int> sample_without_replacement(int population, int count, Rng& rng) {
  std::vector<int> idx(population);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(rng.below(population - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

double best_fitness(const Population& pop) {
  double best = 0.0;
  for (const Individual& ind : pop) {
    if (ind.evaluated()) best = std::max(best, ind.fitness);
  }
  return best;
}

double mean_popcount(const Population& pop) {
  if (pop.empty()) return 0.0;
  double s = 0.0;
  for (const Individual& ind : pop) s += ind.mask.popcount();
  return s / static_cast<double>(pop.size());
}

void evaluate_unscored(SearchState& st, const DataBundle& data) {
  std::vector<int> todo;
  for (std::size_t i = 0; i < st.population.size(); ++i) {
    if (!st.population[i].evaluated()) todo.push_back(static_cast<int>(i));
  }
  if (!st.net.bn_stats_ready()) {
    // no training happened yet (warmup 0): refresh statistics once so
    // fused evaluation has usable running estimates
    calibrate_bn(st.net, data.train, SubnetMask::ones(st.net.total_branches),
                 st.cfg.batch_size, 2, st.rng.next_u64());
  }
  st.net.set_train(false);
  std::exception_ptr failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (todo.size() > 1)
#endif
  for (std::size_t k = 0; k < todo.size(); ++k) {
    try {
      Individual& ind = st.population[todo[k]];
      const EvalReport rep =
          evaluate(st.net, ind.mask, data.val, EvalMode::fused, st.cfg.eval_batch);
      ind.fitness = rep.top1;
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  st.net.set_train(true);
}

void next_generation(SearchState& st) {
  const SearchConfig& cfg = st.cfg;
  Population sorted = st.population;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Individual& a, const Individual& b) {
    return a.fitness > b.fitness;
  });
  const int P = cfg.population_size;
  const int n_par = std::min<int>(P, static_cast<int>(std::ceil(cfg.parent_fraction * P)));
  Population next;
  next.reserve(P);
  for (int i = 0; i < n_par; ++i) {
    Individual parent = sorted[i];
    parent.origin = Origin::parent;
    next.push_back(std::move(parent));
  }
  if (cfg.strategy == "random") {
    while (static_cast<int>(next.size()) < P) {
      next.push_back({random_budget_mask(st.net.total_branches, st.budget, st.rng), -1.0,
                      Origin::importance});
    }
  } else {
    const int n_var =
        std::min<int>(P - n_par, static_cast<int>(std::llround(cfg.variation_fraction * P)));
    for (int i = 0; i < n_var; ++i) {
      const Individual& pa = next[st.rng.below(n_par)];
      const Individual& pb = next[st.rng.below(n_par)];
      SubnetMask child = crossover(pa.mask, pb.mask, cfg.p_cross, st.rng);
      child = mutate(child, cfg.p_mut, cfg.p_bit, st.rng);
      child = repair_to_budget(child, st.net, st.budget);
      next.push_back({std::move(child), -1.0, Origin::variation});
    }
    while (static_cast<int>(next.size()) < P) {
      next.push_back({importance_sample(st.net, st.budget, st.rng), -1.0, Origin::importance});
    }
  }
  st.population = std::move(next);
}

}  // namespace

void run_search(SearchState& st, const DataBundle& data, ProgressSink* sink,
                const std::function<bool(const SearchState&)>& on_round) {
  if (!st.initialized) throw std::logic_error("run_search: state not initialized");
  const SearchConfig& cfg = st.cfg;
  const int total_epochs = cfg.warmup_epochs + cfg.evolution_rounds * cfg.param_epochs_per_round;
  const auto wall0 = std::chrono::steady_clock::now();
  auto wall_s = [&]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  };
  auto emit = [&](int round, double train_loss) {
    if (!sink) return;
    EpochRecord rec;
    rec.round = round;
    rec.epoch = st.epoch;
    rec.train_loss = train_loss;
    rec.best_top1 = best_fitness(st.population);
    rec.mean_sigmoid_alpha = mean_sigmoid(st.net.alpha_values());
    rec.mean_sigmoid_beta = mean_sigmoid(st.net.beta_values());
    rec.active_branch_mean = mean_popcount(st.population);
    rec.wall_s = wall_s();
    sink->on_epoch(rec);
  };

  st.net.set_train(true);
  const SubnetMask all_ones = SubnetMask::ones(st.net.total_branches);

  // warmup trains omega only, with every branch active
  const bool fresh_warmup = st.epoch < cfg.warmup_epochs;
  while (st.epoch < cfg.warmup_epochs) {
    st.sgd.lr = cosine_lr(cfg.lr_w, st.epoch, total_epochs);
    Batches batches(data.train, cfg.batch_size, st.rng.next_u64());
    double loss_acc = 0.0;
    for (std::size_t i = 0; i < batches.size(); ++i) {
      const Batch b = batches.get(i);
      for (const TensorPtr& p : st.omega) p->zero_grad();
      for (const TensorPtr& p : st.arch) p->zero_grad();
      Tape tape;
      TensorPtr loss = softmax_xent(supernet_forward(st.net, b.images, all_ones, &tape),
                                    b.labels, &tape);
      if (!std::isfinite(loss->item())) throw NumericError("warmup: non-finite loss");
      loss_acc += loss->item();
      tape.backward(loss);
      st.sgd.step(st.omega);
    }
    ++st.epoch;
    emit(0, loss_acc / std::max<std::size_t>(1, batches.size()));
  }
  if (fresh_warmup && st.round == 0 && on_round && !on_round(st)) return;

  if (cfg.evolution_rounds == 0) {
    evaluate_unscored(st, data);
  }

  while (st.round < cfg.evolution_rounds) {
    for (int k = 0; k < cfg.param_epochs_per_round; ++k) {
      st.sgd.lr = cosine_lr(cfg.lr_w, st.epoch, total_epochs);
      Batches batches(data.train, cfg.batch_size, st.rng.next_u64());
      double loss_acc = 0.0;
      for (std::size_t i = 0; i < batches.size(); ++i) {
        const Batch b = batches.get(i);
        const std::vector<int> sampled =
            sample_without_replacement(cfg.population_size, cfg.subnet_batch, st.rng);
        loss_acc += train_step(st, b, sampled);
      }
      ++st.epoch;
      if (k == cfg.param_epochs_per_round - 1) {
        evaluate_unscored(st, data);
      }
      emit(st.round + 1, loss_acc / std::max<std::size_t>(1, batches.size()));
    }
    ++st.round;
    if (st.round < cfg.evolution_rounds) next_generation(st);
    if (on_round && !on_round(st)) return;
  }

  std::stable_sort(st.population.begin(), st.population.end(),
                   [](const Individual& a, const Individual& b) { return a.fitness > b.fitness; });
  st.net.set_train(false);
}

Population evolve(SuperNet& net, const DataBundle& data, const SearchConfig& cfg,
                  ProgressSink* sink) {
  SearchState st = init_search(std::move(net), cfg);
  run_search(st, data, sink);
  net = std::move(st.net);
  return std::move(st.population);
}

const Individual& best_individual(const Population& pop) {
  if (pop.empty()) throw std::logic_error("best_individual: empty population");
  const Individual* best = &pop[0];
  for (const Individual& ind : pop) {
    if (ind.fitness > best->fitness) best = &ind;
  }
  return *best;
}

}  // namespace irep
