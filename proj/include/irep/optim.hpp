#pragma once

#include <unordered_map>
#include <vector>

#include "irep/tensor.hpp"

namespace irep {

// SGD with momentum and decoupled-from-nothing classic weight decay
// (decay is added to the gradient before the momentum update).
class Sgd {
 public:
  Sgd(double lr, double momentum = 0.0, double weight_decay = 0.0)
      : lr(lr), momentum(momentum), weight_decay(weight_decay) {}

  void step(const std::vector<TensorPtr>& params);

  double lr;
  double momentum;
  double weight_decay;

  bool has_state(const TensorPtr& p) const { return velocity_.count(p.get()) != 0; }
  const std::vector<double>& state(const TensorPtr& p) const { return velocity_.at(p.get()); }
  void set_state(const TensorPtr& p, std::vector<double> v) { velocity_[p.get()] = std::move(v); }

 private:
  std::unordered_map<Tensor*, std::vector<double>> velocity_;
};

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr(lr), beta1(beta1), beta2(beta2), eps(eps) {}

  void step(const std::vector<TensorPtr>& params);

  double lr;
  double beta1, beta2, eps;

  long t() const { return t_; }
  void set_t(long t) { t_ = t; }
  bool has_state(const TensorPtr& p) const { return m_.count(p.get()) != 0; }
  const std::vector<double>& state_m(const TensorPtr& p) const { return m_.at(p.get()); }
  const std::vector<double>& state_v(const TensorPtr& p) const { return v_.at(p.get()); }
  void set_state(const TensorPtr& p, std::vector<double> m, std::vector<double> v) {
    m_[p.get()] = std::move(m);
    v_[p.get()] = std::move(v);
  }

 private:
  long t_ = 0;
  std::unordered_map<Tensor*, std::vector<double>> m_, v_;
};

}  // namespace irep
