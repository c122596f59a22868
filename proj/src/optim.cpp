#include "irep/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace irep {

namespace {

void require_grad_buffer(const TensorPtr& p) {
  if (!p->requires_grad || p->grad.size() != p->data.size()) {
    throw std::logic_error("optimizer: step before backward, parameter has no gradient");
  }
}

}  // namespace

void Sgd::step(const std::vector<TensorPtr>& params) {
  for (const TensorPtr& p : params) {
    require_grad_buffer(p);
    if (momentum != 0.0) {
      auto& v = velocity_[p.get()];
      if (v.size() != p->data.size()) v.assign(p->data.size(), 0.0);
      for (std::size_t i = 0; i < p->data.size(); ++i) {
        const double g = p->grad[i] + weight_decay * p->data[i];
        v[i] = momentum * v[i] + g;
        p->data[i] -= lr * v[i];
      }
    } else {
      for (std::size_t i = 0; i < p->data.size(); ++i) {
        const double g = p->grad[i] + weight_decay * p->data[i];
        p->data[i] -= lr * g;
      }
    }
  }
}

void Adam::step(const std::vector<TensorPtr>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (const TensorPtr& p : params) {
    require_grad_buffer(p);
    auto& m = m_[p.get()];
    auto& v = v_[p.get()];
    if (m.size() != p->data.size()) m.assign(p->data.size(), 0.0);
    if (v.size() != p->data.size()) v.assign(p->data.size(), 0.0);
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const double g = p->grad[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p->data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace irep
