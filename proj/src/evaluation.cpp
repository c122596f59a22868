#include "irep/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "irep/errors.hpp"
#include "irep/kernels.hpp"

namespace irep {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

int argmax_row(const double* row, int k) {
  int best = 0;
  for (int i = 1; i < k; ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

struct ScoredBatch {
  int correct = 0;
  double loss_sum = 0.0;  // summed over samples
};

ScoredBatch score_logits(const TensorPtr& logits, const std::vector<int>& labels) {
  const int N = logits->shape.n, K = logits->shape.c;
  ScoredBatch s;
  for (int n = 0; n < N; ++n) {
    const double* row = logits->data.data() + 1LL * n * K;
    if (argmax_row(row, K) == labels[n]) ++s.correct;
    double mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    s.loss_sum += std::log(z) + mx - row[labels[n]];
  }
  return s;
}

// evaluation may run concurrently across individuals over the shared net, so
// the mode switch has to happen once, outside, in the caller
void require_eval_mode(const SuperNet& net) {
  for (const BlockSpec& b : net.blocks) {
    if (b.fixed_bn.train) {
      throw std::logic_error("evaluate: net must be in eval mode (call set_train(false))");
    }
  }
}

}  // namespace

EvalReport evaluate(SuperNet& net, const SubnetMask& mask, const Dataset& data, EvalMode mode,
                    int batch_size) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  if (!net.bn_stats_ready()) {
    throw NumericError("evaluate: uncalibrated batchnorm running statistics");
  }
  require_eval_mode(net);
  Batches batches = Batches::sequential(data, batch_size);
  std::vector<Batch> prepared;
  prepared.reserve(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) prepared.push_back(batches.get(i));

  EvalReport report;
  report.mask = mask;
  report.mode = mode;
  const auto t0 = Clock::now();
  int correct = 0;
  double loss_sum = 0.0;
  if (mode == EvalMode::fused) {
    PlainNet plain = reparameterize_network(net, mask);
    for (const Batch& b : prepared) {
      const ScoredBatch s = score_logits(plain.forward(b.images), b.labels);
      correct += s.correct;
      loss_sum += s.loss_sum;
    }
  } else {
    for (const Batch& b : prepared) {
      const ScoredBatch s = score_logits(supernet_forward(net, b.images, mask, nullptr), b.labels);
      correct += s.correct;
      loss_sum += s.loss_sum;
    }
  }
  report.wall_time_ms = ms_since(t0);
  report.top1 = static_cast<double>(correct) / data.n;
  report.loss = loss_sum / data.n;
  return report;
}

BenchResult bench_eval_speed(SuperNet& net, const std::vector<SubnetMask>& population,
                             const Dataset& data, int batch_size, int runs) {
  if (population.empty()) throw UsageError("bench: empty population");
  if (data.empty()) throw DataError("bench: empty dataset");
  if (runs < 1) throw UsageError("bench: need at least one run");
  kernels::ThreadLimit one_thread(1);
  net.set_train(false);

  Batches batches = Batches::sequential(data, batch_size);
  const Batch batch = batches.get(0);

  auto time_multi = [&]() {
    const auto t0 = Clock::now();
    for (const SubnetMask& mask : population) {
      volatile double sink = supernet_forward(net, batch.images, mask, nullptr)->data[0];
      (void)sink;
    }
    return ms_since(t0);
  };
  auto time_fused = [&]() {
    const auto t0 = Clock::now();
    for (const SubnetMask& mask : population) {
      PlainNet plain = reparameterize_network(net, mask);
      volatile double sink = plain.forward(batch.images)->data[0];
      (void)sink;
    }
    return ms_since(t0);
  };

  time_multi();  // warmup, discarded
  time_fused();
  std::vector<double> tm, tf;
  for (int r = 0; r < runs; ++r) {
    tm.push_back(time_multi());
    tf.push_back(time_fused());
  }
  std::sort(tm.begin(), tm.end());
  std::sort(tf.begin(), tf.end());
  BenchResult res;
  res.t_multi_ms = tm[tm.size() / 2];
  res.t_fused_ms = tf[tf.size() / 2];
  res.accel_pct = (res.t_multi_ms - res.t_fused_ms) / res.t_multi_ms * 100.0;
  return res;
}

std::vector<double> diff_matrix(const SuperNet& net, KernelKind a, KernelKind b) {
  std::vector<double> out;
  out.reserve(net.blocks.size());
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const BlockSpec& blk = net.blocks[i];
    const Candidate* ca = nullptr;
    const Candidate* cb = nullptr;
    for (const Candidate& c : blk.candidates) {
      if (c.kind == a) ca = &c;
      if (c.kind == b) cb = &c;
    }
    if (!ca || !cb) {
      throw DataError("diff_matrix: block " + std::to_string(i) + " lacks kind " +
                      kind_name(ca ? b : a));
    }
    out.push_back(sigmoid_value(ca->alpha->data[0]) - sigmoid_value(cb->alpha->data[0]));
  }
  return out;
}

void calibrate_bn(SuperNet& net, const Dataset& train, const SubnetMask& mask, int batch_size,
                  int batches, std::uint64_t order_seed) {
  if (batches < 1) return;
  net.set_train(true);
  Batches plan(train, batch_size, order_seed);
  const std::size_t count = std::min<std::size_t>(batches, plan.size());
  for (std::size_t i = 0; i < count; ++i) {
    const Batch b = plan.get(i);
    supernet_forward(net, b.images, mask, nullptr);
  }
  net.set_train(false);
}

}  // namespace irep
