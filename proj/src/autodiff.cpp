#include "irep/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "irep/kernels.hpp"

namespace irep {

namespace {

bool want_grad(Tape* tape, std::initializer_list<const TensorPtr*> inputs) {
  if (!tape) return false;
  for (const TensorPtr* t : inputs) {
    if (*t && (*t)->requires_grad) return true;
  }
  return false;
}

kernels::ConvGeom conv_geom(const TensorPtr& x, const ConvParams& p) {
  kernels::ConvGeom g;
  g.n = x->shape.n;
  g.in_c = x->shape.c;
  g.in_h = x->shape.h;
  g.in_w = x->shape.w;
  g.out_c = p.weight->shape.n;
  g.k_h = p.weight->shape.h;
  g.k_w = p.weight->shape.w;
  g.s_h = p.stride.first;
  g.s_w = p.stride.second;
  g.p_h = p.padding.first;
  g.p_w = p.padding.second;
  g.d_h = p.dilation.first;
  g.d_w = p.dilation.second;
  g.groups = p.groups;
  if (g.groups < 1) throw std::invalid_argument("conv2d: groups must be positive");
  if (g.in_c % g.groups != 0 || g.out_c % g.groups != 0) {
    throw std::invalid_argument("conv2d: channels " + std::to_string(g.in_c) + "->" +
                                std::to_string(g.out_c) + " not divisible by groups " +
                                std::to_string(g.groups));
  }
  if (p.weight->shape.c * g.groups != g.in_c) {
    throw std::invalid_argument(
        "conv2d: input channels " + std::to_string(g.in_c) + " do not match weight " +
        p.weight->shape.str() + " with groups " + std::to_string(g.groups));
  }
  g.out_h = kernels::conv_out_dim(g.in_h, g.p_h, g.k_h, g.d_h, g.s_h);
  g.out_w = kernels::conv_out_dim(g.in_w, g.p_w, g.k_w, g.d_w, g.s_w);
  if (g.out_h < 1) {
    throw std::invalid_argument("conv2d: effective kernel height " +
                                std::to_string((g.k_h - 1) * g.d_h + 1) +
                                " exceeds padded input height " +
                                std::to_string(g.in_h + 2 * g.p_h));
  }
  if (g.out_w < 1) {
    throw std::invalid_argument("conv2d: effective kernel width " +
                                std::to_string((g.k_w - 1) * g.d_w + 1) +
                                " exceeds padded input width " +
                                std::to_string(g.in_w + 2 * g.p_w));
  }
  return g;
}

}  // namespace

double sigmoid_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

BNParams make_batchnorm(int channels, double eps, double momentum) {
  BNParams bn;
  bn.gamma = Tensor::fill({1, channels, 1, 1}, 1.0, true);
  bn.beta = Tensor::fill({1, channels, 1, 1}, 0.0, true);
  bn.running_mean.assign(static_cast<std::size_t>(channels), 0.0);
  bn.running_var.assign(static_cast<std::size_t>(channels), 1.0);
  bn.eps = eps;
  bn.momentum = momentum;
  return bn;
}

void Tape::backward(const TensorPtr& loss) {
  if (loss->numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + loss->shape.str());
  }
  if (!loss->requires_grad || loss->grad.empty() || steps_.empty()) {
    throw std::logic_error("backward: loss tensor is detached from this tape");
  }
  loss->grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

TensorPtr conv2d(const TensorPtr& x, const ConvParams& p, Tape* tape) {
  const kernels::ConvGeom g = conv_geom(x, p);
  if (p.bias && p.bias->shape.numel() != g.out_c) {
    throw std::invalid_argument("conv2d: bias has " + std::to_string(p.bias->numel()) +
                                " entries, expected " + std::to_string(g.out_c));
  }
  const bool rec = want_grad(tape, {&x, &p.weight, &p.bias});
  auto out = Tensor::create({g.n, g.out_c, g.out_h, g.out_w}, rec);
  kernels::conv2d_forward(g, x->data.data(), p.weight->data.data(),
                          p.bias ? p.bias->data.data() : nullptr, out->data.data());
  if (rec) {
    TensorPtr w = p.weight, b = p.bias;
    tape->record([g, x, w, b, out]() {
      if (x->requires_grad) {
        kernels::conv2d_backward_input(g, out->grad.data(), w->data.data(), x->grad.data());
      }
      if (w->requires_grad) {
        kernels::conv2d_backward_weight(g, x->data.data(), out->grad.data(), w->grad.data());
      }
      if (b && b->requires_grad) {
        kernels::conv2d_backward_bias(g, out->grad.data(), b->grad.data());
      }
    });
  }
  return out;
}

TensorPtr batchnorm(const TensorPtr& x, BNParams& p, Tape* tape) {
  const int C = p.channels();
  if (x->shape.c != C) {
    throw std::invalid_argument("batchnorm: input channels " + std::to_string(x->shape.c) +
                                " do not match parameter channels " + std::to_string(C));
  }
  if (!(p.eps > 0.0)) {
    throw std::invalid_argument("batchnorm: eps must be positive");
  }
  const int N = x->shape.n, H = x->shape.h, W = x->shape.w;
  const long long m = 1LL * N * H * W;
  const long long plane = 1LL * H * W;
  const bool rec = want_grad(tape, {&x, &p.gamma, &p.beta});
  auto out = Tensor::create(x->shape, rec);

  if (p.train) {
    if (m < 1) throw std::invalid_argument("batchnorm: empty input");
    std::vector<double> mean(C, 0.0), var(C, 0.0), istd(C, 0.0);
    auto xhat = std::make_shared<std::vector<double>>(x->data.size());
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* xp = x->data.data() + (1LL * n * C + c) * plane;
        for (long long i = 0; i < plane; ++i) s += xp[i];
      }
      const double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* xp = x->data.data() + (1LL * n * C + c) * plane;
        for (long long i = 0; i < plane; ++i) {
          const double d = xp[i] - mu;
          v += d * d;
        }
      }
      v /= static_cast<double>(m);  // biased variance for normalization
      mean[c] = mu;
      var[c] = v;
      istd[c] = 1.0 / std::sqrt(v + p.eps);
      const double gm = p.gamma->data[c], bt = p.beta->data[c];
      for (int n = 0; n < N; ++n) {
        const long long base = (1LL * n * C + c) * plane;
        for (long long i = 0; i < plane; ++i) {
          const double xh = (x->data[base + i] - mu) * istd[c];
          (*xhat)[base + i] = xh;
          out->data[base + i] = gm * xh + bt;
        }
      }
      // unbiased variance feeds the running estimate
      const double vu = m > 1 ? v * static_cast<double>(m) / static_cast<double>(m - 1) : v;
      p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mu;
      p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * vu;
    }
    p.stats_ready = true;
    if (rec) {
      TensorPtr gamma = p.gamma, beta = p.beta;
      tape->record([x, gamma, beta, out, xhat, istd, C, N, plane, m]() {
        for (int c = 0; c < C; ++c) {
          double s1 = 0.0, s2 = 0.0;
          for (int n = 0; n < N; ++n) {
            const long long base = (1LL * n * C + c) * plane;
            for (long long i = 0; i < plane; ++i) {
              const double dy = out->grad[base + i];
              s1 += dy;
              s2 += dy * (*xhat)[base + i];
            }
          }
          if (beta->requires_grad) beta->grad[c] += s1;
          if (gamma->requires_grad) gamma->grad[c] += s2;
          if (x->requires_grad) {
            const double gm = gamma->data[c];
            const double k1 = s1 / static_cast<double>(m);
            const double k2 = s2 / static_cast<double>(m);
            for (int n = 0; n < N; ++n) {
              const long long base = (1LL * n * C + c) * plane;
              for (long long i = 0; i < plane; ++i) {
                const double dy = out->grad[base + i];
                x->grad[base + i] += gm * istd[c] * (dy - k1 - (*xhat)[base + i] * k2);
              }
            }
          }
        }
      });
    }
  } else {
    std::vector<double> istd(C);
    for (int c = 0; c < C; ++c) istd[c] = 1.0 / std::sqrt(p.running_var[c] + p.eps);
    std::vector<double> rm = p.running_mean;
    for (int c = 0; c < C; ++c) {
      const double gm = p.gamma->data[c], bt = p.beta->data[c];
      const double sc = gm * istd[c];
      for (int n = 0; n < N; ++n) {
        const long long base = (1LL * n * C + c) * plane;
        for (long long i = 0; i < plane; ++i) {
          out->data[base + i] = sc * (x->data[base + i] - rm[c]) + bt;
        }
      }
    }
    if (rec) {
      TensorPtr gamma = p.gamma, beta = p.beta;
      tape->record([x, gamma, beta, out, istd, rm, C, N, plane]() {
        for (int c = 0; c < C; ++c) {
          double s1 = 0.0, s2 = 0.0;
          for (int n = 0; n < N; ++n) {
            const long long base = (1LL * n * C + c) * plane;
            for (long long i = 0; i < plane; ++i) {
              const double dy = out->grad[base + i];
              s1 += dy;
              s2 += dy * (x->data[base + i] - rm[c]) * istd[c];
            }
          }
          if (beta->requires_grad) beta->grad[c] += s1;
          if (gamma->requires_grad) gamma->grad[c] += s2;
          if (x->requires_grad) {
            const double sc = gamma->data[c] * istd[c];
            for (int n = 0; n < N; ++n) {
              const long long base = (1LL * n * C + c) * plane;
              for (long long i = 0; i < plane; ++i) {
                x->grad[base + i] += sc * out->grad[base + i];
              }
            }
          }
        }
      });
    }
  }
  return out;
}

TensorPtr avgpool2d(const TensorPtr& x, int k, int stride, int pad, Tape* tape) {
  if (k < 1 || stride < 1 || pad < 0 || pad >= k) {
    throw std::invalid_argument("avgpool2d: invalid window k=" + std::to_string(k) +
                                " stride=" + std::to_string(stride) +
                                " pad=" + std::to_string(pad));
  }
  const int out_h = kernels::conv_out_dim(x->shape.h, pad, k, 1, stride);
  const int out_w = kernels::conv_out_dim(x->shape.w, pad, k, 1, stride);
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("avgpool2d: window " + std::to_string(k) +
                                " exceeds padded input " + x->shape.str());
  }
  const bool rec = want_grad(tape, {&x});
  auto out = Tensor::create({x->shape.n, x->shape.c, out_h, out_w}, rec);
  kernels::avgpool_forward(x->shape.n, x->shape.c, x->shape.h, x->shape.w, k, stride, pad,
                           x->data.data(), out->data.data());
  if (rec) {
    const Shape4 s = x->shape;
    tape->record([x, out, s, k, stride, pad]() {
      kernels::avgpool_backward(s.n, s.c, s.h, s.w, k, stride, pad, out->grad.data(),
                                x->grad.data());
    });
  }
  return out;
}

TensorPtr global_avgpool(const TensorPtr& x, Tape* tape) {
  const int N = x->shape.n, C = x->shape.c;
  const long long plane = 1LL * x->shape.h * x->shape.w;
  if (plane < 1) throw std::invalid_argument("global_avgpool: empty spatial extent");
  const bool rec = want_grad(tape, {&x});
  auto out = Tensor::create({N, C, 1, 1}, rec);
  const double inv = 1.0 / static_cast<double>(plane);
  for (long long t = 0; t < 1LL * N * C; ++t) {
    const double* xp = x->data.data() + t * plane;
    double acc = 0.0;
    for (long long i = 0; i < plane; ++i) acc += xp[i];
    out->data[t] = acc * inv;
  }
  if (rec) {
    tape->record([x, out, plane, inv]() {
      for (std::size_t t = 0; t < out->data.size(); ++t) {
        const double g = out->grad[t] * inv;
        double* xg = x->grad.data() + t * plane;
        for (long long i = 0; i < plane; ++i) xg[i] += g;
      }
    });
  }
  return out;
}

TensorPtr relu(const TensorPtr& x, Tape* tape) {
  const bool rec = want_grad(tape, {&x});
  auto out = Tensor::create(x->shape, rec);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
  }
  if (rec) {
    tape->record([x, out]() {
      for (std::size_t i = 0; i < x->data.size(); ++i) {
        if (x->data[i] > 0.0) x->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  if (!(a->shape == b->shape)) {
    throw std::invalid_argument("add: shape mismatch " + a->shape.str() + " vs " +
                                b->shape.str());
  }
  const bool rec = want_grad(tape, {&a, &b});
  auto out = Tensor::create(a->shape, rec);
  for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (rec) {
    tape->record([a, b, out]() {
      if (a->requires_grad) {
        for (std::size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        for (std::size_t i = 0; i < b->data.size(); ++i) b->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  if (!(a->shape == b->shape)) {
    throw std::invalid_argument("mul: shape mismatch " + a->shape.str() + " vs " +
                                b->shape.str());
  }
  const bool rec = want_grad(tape, {&a, &b});
  auto out = Tensor::create(a->shape, rec);
  for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
  if (rec) {
    tape->record([a, b, out]() {
      if (a->requires_grad) {
        for (std::size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
      }
      if (b->requires_grad) {
        for (std::size_t i = 0; i < b->data.size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
      }
    });
  }
  return out;
}

TensorPtr scale(const TensorPtr& x, const TensorPtr& gate, Tape* tape) {
  if (gate->numel() != 1) {
    throw std::invalid_argument("scale: gate must be a 1-element tensor, got " +
                                gate->shape.str());
  }
  const bool rec = want_grad(tape, {&x, &gate});
  auto out = Tensor::create(x->shape, rec);
  const double s = gate->data[0];
  for (std::size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] * s;
  if (rec) {
    tape->record([x, gate, out, s]() {
      if (x->requires_grad) {
        for (std::size_t i = 0; i < x->data.size(); ++i) x->grad[i] += out->grad[i] * s;
      }
      if (gate->requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < x->data.size(); ++i) acc += out->grad[i] * x->data[i];
        gate->grad[0] += acc;
      }
    });
  }
  return out;
}

TensorPtr sigmoid(const TensorPtr& x, Tape* tape) {
  const bool rec = want_grad(tape, {&x});
  auto out = Tensor::create(x->shape, rec);
  for (std::size_t i = 0; i < x->data.size(); ++i) out->data[i] = sigmoid_value(x->data[i]);
  if (rec) {
    tape->record([x, out]() {
      for (std::size_t i = 0; i < x->data.size(); ++i) {
        const double y = out->data[i];
        x->grad[i] += out->grad[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

TensorPtr sum_all(const TensorPtr& x, Tape* tape) {
  const bool rec = want_grad(tape, {&x});
  auto out = Tensor::create({1, 1, 1, 1}, rec);
  double acc = 0.0;
  for (double v : x->data) acc += v;
  out->data[0] = acc;
  if (rec) {
    tape->record([x, out]() {
      const double g = out->grad[0];
      for (std::size_t i = 0; i < x->data.size(); ++i) x->grad[i] += g;
    });
  }
  return out;
}

TensorPtr softmax_xent(const TensorPtr& logits, const std::vector<int>& labels, Tape* tape) {
  const int N = logits->shape.n, K = logits->shape.c;
  if (logits->shape.h != 1 || logits->shape.w != 1) {
    throw std::invalid_argument("softmax_xent: logits must be (N,K,1,1), got " +
                                logits->shape.str());
  }
  if (static_cast<int>(labels.size()) != N) {
    throw std::invalid_argument("softmax_xent: " + std::to_string(labels.size()) +
                                " labels for batch " + std::to_string(N));
  }
  for (int n = 0; n < N; ++n) {
    if (labels[n] < 0 || labels[n] >= K) {
      throw std::invalid_argument("softmax_xent: label " + std::to_string(labels[n]) +
                                  " out of range for " + std::to_string(K) + " classes");
    }
  }
  const bool rec = want_grad(tape, {&logits});
  auto out = Tensor::create({1, 1, 1, 1}, rec);
  auto probs = std::make_shared<std::vector<double>>(logits->data.size());
  double loss = 0.0;
  for (int n = 0; n < N; ++n) {
    const double* row = logits->data.data() + 1LL * n * K;
    double mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const double logz = std::log(z) + mx;
    for (int k = 0; k < K; ++k) (*probs)[1LL * n * K + k] = std::exp(row[k] - logz);
    loss -= row[labels[n]] - logz;
  }
  out->data[0] = loss / static_cast<double>(N);
  if (rec) {
    tape->record([logits, out, probs, labels, N, K]() {
      const double g = out->grad[0] / static_cast<double>(N);
      for (int n = 0; n < N; ++n) {
        for (int k = 0; k < K; ++k) {
          const double onehot = k == labels[n] ? 1.0 : 0.0;
          logits->grad[1LL * n * K + k] += g * ((*probs)[1LL * n * K + k] - onehot);
        }
      }
    });
  }
  return out;
}

}  // namespace irep
