#include "irep/tensor.hpp"

#include <stdexcept>
#include <utility>

namespace irep {

std::string Shape4::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
         "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape4 s, bool rg) : shape(s), requires_grad(rg) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
    throw std::invalid_argument("tensor: negative dimension in shape " + s.str());
  }
  data.assign(static_cast<std::size_t>(s.numel()), 0.0);
  if (rg) grad.assign(data.size(), 0.0);
}

TensorPtr Tensor::create(Shape4 s, bool requires_grad) {
  return std::make_shared<Tensor>(s, requires_grad);
}

TensorPtr Tensor::fill(Shape4 s, double value, bool requires_grad) {
  auto t = create(s, requires_grad);
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
  return fill({1, 1, 1, 1}, value, requires_grad);
}

TensorPtr Tensor::from(Shape4 s, std::vector<double> values, bool requires_grad) {
  auto t = create(s, requires_grad);
  if (static_cast<long long>(values.size()) != s.numel()) {
    throw std::invalid_argument("tensor: got " + std::to_string(values.size()) +
                                " values for shape " + s.str());
  }
  t->data = std::move(values);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::logic_error("tensor: item() on non-scalar shape " + shape.str());
  }
  return data[0];
}

void Tensor::zero_grad() {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
}

TensorPtr Tensor::clone() const {
  auto t = create(shape, false);
  t->data = data;
  return t;
}

}  // namespace irep
