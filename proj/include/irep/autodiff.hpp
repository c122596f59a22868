#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "irep/tensor.hpp"

namespace irep {

struct ConvParams {
  TensorPtr weight;                 // (out_c, in_c/groups, k_h, k_w)
  TensorPtr bias;                   // optional, (1, out_c, 1, 1)
  std::pair<int, int> stride{1, 1};
  std::pair<int, int> padding{0, 0};
  std::pair<int, int> dilation{1, 1};
  int groups = 1;

  int out_channels() const { return weight->shape.n; }
  int in_channels() const { return weight->shape.c * groups; }
};

struct BNParams {
  TensorPtr gamma, beta;            // (1, c, 1, 1)
  std::vector<double> running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  bool train = true;
  // set by the first train-mode pass or by explicit calibration; fused or
  // eval-mode use of never-updated statistics is rejected by evaluation
  bool stats_ready = false;

  int channels() const { return gamma->shape.c; }
};

BNParams make_batchnorm(int channels, double eps = 1e-5, double momentum = 0.1);

// Reverse-mode tape. Ops append one step per primitive in execution order;
// backward() replays the steps in reverse, which visits the graph in reverse
// topological order exactly once. Gradients of repeated uses accumulate by
// addition, and every step performs exactly one += per gradient element of a
// precomputed reduction, so accumulation across tapes is order-exact.
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  void backward(const TensorPtr& loss);
  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

TensorPtr conv2d(const TensorPtr& x, const ConvParams& p, Tape* tape);
TensorPtr batchnorm(const TensorPtr& x, BNParams& p, Tape* tape);
TensorPtr avgpool2d(const TensorPtr& x, int k, int stride, int pad, Tape* tape);
TensorPtr global_avgpool(const TensorPtr& x, Tape* tape);
TensorPtr relu(const TensorPtr& x, Tape* tape);
TensorPtr add(const TensorPtr& a, const TensorPtr& b, Tape* tape);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b, Tape* tape);
// multiply every element of x by the 1-element gate tensor
TensorPtr scale(const TensorPtr& x, const TensorPtr& gate, Tape* tape);
TensorPtr sigmoid(const TensorPtr& x, Tape* tape);
TensorPtr sum_all(const TensorPtr& x, Tape* tape);
// mean over the batch of -log softmax(logits)[label]; logits are (N, K, 1, 1)
TensorPtr softmax_xent(const TensorPtr& logits, const std::vector<int>& labels, Tape* tape);

double sigmoid_value(double x);

}  // namespace irep
