#pragma once

#include <memory>
#include <string>
#include <vector>

namespace irep {

struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;
  long long numel() const { return 1LL * n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major NCHW block of doubles. All internal arithmetic is 64-bit;
// 32-bit values appear only at the serialization boundary. Tensors that
// require gradients carry a grad buffer of identical shape, accumulated
// additively by the tape during the backward pass.
class Tensor {
 public:
  Shape4 shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor(Shape4 s, bool rg);

  static TensorPtr create(Shape4 s, bool requires_grad = false);
  static TensorPtr fill(Shape4 s, double value, bool requires_grad = false);
  static TensorPtr scalar(double value, bool requires_grad = false);
  static TensorPtr from(Shape4 s, std::vector<double> values, bool requires_grad = false);

  long long numel() const { return shape.numel(); }
  long long index(int n, int c, int h, int w) const {
    return ((1LL * n * shape.c + c) * shape.h + h) * shape.w + w;
  }
  double& at(int n, int c, int h, int w) { return data[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const { return data[index(n, c, h, w)]; }

  // value of a 1-element tensor
  double item() const;

  void zero_grad();

  // deep copy of the values only; the copy does not require gradients
  TensorPtr clone() const;
};

}  // namespace irep
