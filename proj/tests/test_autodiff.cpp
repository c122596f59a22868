#include <doctest.h>

#include <cmath>

#include "irep/autodiff.hpp"
#include "irep/rng.hpp"
#include "oracles.hpp"

using namespace irep;

namespace {

// keep relu inputs away from the kink so finite differences stay smooth
void nudge_from_zero(const TensorPtr& t, double margin = 1e-3) {
  for (double& v : t->data) {
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  }
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("conv2d gradients match finite differences over 20 seeds") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int groups = seed % 5 == 0 ? 2 : 1;
    const int icg = 1 + static_cast<int>(rng.below(2));
    const int ocg = 1 + static_cast<int>(rng.below(2));
    ConvParams p;
    p.weight = oracle::random_tensor({ocg * groups, icg, 1 + static_cast<int>(rng.below(3)),
                                      1 + static_cast<int>(rng.below(3))},
                                     rng, -1, 1, true);
    p.bias = oracle::random_tensor({1, ocg * groups, 1, 1}, rng, -1, 1, true);
    p.stride = {1 + static_cast<int>(rng.below(2)), 1};
    p.padding = {static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2))};
    p.dilation = {1, 1 + static_cast<int>(rng.below(2))};
    p.groups = groups;
    auto x = oracle::random_tensor(
        {1 + static_cast<int>(rng.below(2)), icg * groups,
         p.weight->shape.h + 3, (p.weight->shape.w - 1) * p.dilation.second + 3},
        rng, -1, 1, true);

    auto loss_value = [&]() {
      auto y = conv2d(x, p, nullptr);
      double acc = 0.0;  // deterministic weighting distinguishes elements
      for (std::size_t i = 0; i < y->data.size(); ++i) {
        acc += y->data[i] * (0.3 + 0.1 * (i % 7));
      }
      return acc;
    };
    Tape tape;
    auto y = conv2d(x, p, &tape);
    auto wgt = Tensor::create(y->shape, false);
    for (std::size_t i = 0; i < wgt->data.size(); ++i) wgt->data[i] = 0.3 + 0.1 * (i % 7);
    auto loss = sum_all(mul(y, wgt, &tape), &tape);
    tape.backward(loss);

    CHECK(oracle::max_rel_err(x->grad, oracle::finite_diff(x, loss_value)) <= 1e-6);
    CHECK(oracle::max_rel_err(p.weight->grad, oracle::finite_diff(p.weight, loss_value)) <= 1e-6);
    CHECK(oracle::max_rel_err(p.bias->grad, oracle::finite_diff(p.bias, loss_value)) <= 1e-6);
  }
}

TEST_CASE("batchnorm gradients match finite differences in both modes") {
  for (int seed = 0; seed < 20; ++seed) {
    for (bool train : {true, false}) {
      Rng rng(100 + seed);
      const int C = 1 + static_cast<int>(rng.below(3));
      auto x = oracle::random_tensor({2, C, 3, 3}, rng, -1, 1, true);
      BNParams bn = oracle::random_bn(C, rng);
      bn.train = train;
      bn.gamma->requires_grad = true;
      bn.beta->requires_grad = true;

      auto weights = [&](const TensorPtr& y) {
        double acc = 0.0;
        for (std::size_t i = 0; i < y->data.size(); ++i) acc += y->data[i] * (0.2 + 0.05 * (i % 5));
        return acc;
      };
      auto loss_value = [&]() {
        BNParams probe = bn;  // isolate running-stat updates per evaluation
        probe.running_mean = bn.running_mean;
        probe.running_var = bn.running_var;
        return weights(batchnorm(x, probe, nullptr));
      };
      Tape tape;
      BNParams live = bn;
      live.running_mean = bn.running_mean;
      live.running_var = bn.running_var;
      auto y = batchnorm(x, live, &tape);
      auto wgt = Tensor::create(y->shape, false);
      for (std::size_t i = 0; i < wgt->data.size(); ++i) wgt->data[i] = 0.2 + 0.05 * (i % 5);
      auto loss = sum_all(mul(y, wgt, &tape), &tape);
      tape.backward(loss);

      CHECK(oracle::max_rel_err(x->grad, oracle::finite_diff(x, loss_value)) <= 1e-6);
      CHECK(oracle::max_rel_err(bn.gamma->grad, oracle::finite_diff(bn.gamma, loss_value)) <= 1e-6);
      CHECK(oracle::max_rel_err(bn.beta->grad, oracle::finite_diff(bn.beta, loss_value)) <= 1e-6);
    }
  }
}

TEST_CASE("pointwise and pooling gradients match finite differences") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(200 + seed);
    auto x = oracle::random_tensor({1, 2, 4, 4}, rng, -1, 1, true);
    nudge_from_zero(x);
    auto g = Tensor::scalar(rng.uniform(-1, 1), true);

    auto loss_value = [&]() {
      auto a = relu(x, nullptr);
      auto b = avgpool2d(a, 2, 1, 1, nullptr);
      auto c = scale(b, sigmoid(g, nullptr), nullptr);
      auto d = global_avgpool(c, nullptr);
      return sum_all(d, nullptr)->item();
    };
    Tape tape;
    auto a = relu(x, &tape);
    auto b = avgpool2d(a, 2, 1, 1, &tape);
    auto c = scale(b, sigmoid(g, &tape), &tape);
    auto d = global_avgpool(c, &tape);
    auto loss = sum_all(d, &tape);
    tape.backward(loss);

    CHECK(oracle::max_rel_err(x->grad, oracle::finite_diff(x, loss_value)) <= 1e-6);
    CHECK(oracle::max_rel_err(g->grad, oracle::finite_diff(g, loss_value)) <= 1e-6);
  }
}

TEST_CASE("softmax cross-entropy gradients match finite differences") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    const int N = 3, K = 4;
    auto logits = oracle::random_tensor({N, K, 1, 1}, rng, -2, 2, true);
    std::vector<int> labels;
    for (int n = 0; n < N; ++n) labels.push_back(static_cast<int>(rng.below(K)));
    auto loss_value = [&]() { return softmax_xent(logits, labels, nullptr)->item(); };
    Tape tape;
    auto loss = softmax_xent(logits, labels, &tape);
    tape.backward(loss);
    CHECK(oracle::max_rel_err(logits->grad, oracle::finite_diff(logits, loss_value)) <= 1e-6);
  }
}

TEST_CASE("uniform logits over 4 classes give loss ln 4") {
  auto logits = Tensor::fill({2, 4, 1, 1}, 0.7);
  auto loss = softmax_xent(logits, {1, 3}, nullptr);
  CHECK(loss->item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("one-hot logit with a large margin drives the loss to zero") {
  auto logits = Tensor::create({1, 3, 1, 1}, false);
  logits->data = {50.0, 0.0, 0.0};
  CHECK(softmax_xent(logits, {0}, nullptr)->item() <= 1e-12);
}

TEST_CASE("two-class loss matches the scalar formula") {
  auto logits = Tensor::create({1, 2, 1, 1}, false);
  logits->data = {0.3, -1.1};
  const double want = -std::log(std::exp(0.3) / (std::exp(0.3) + std::exp(-1.1)));
  CHECK(softmax_xent(logits, {0}, nullptr)->item() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("label out of range is rejected") {
  auto logits = Tensor::fill({1, 3, 1, 1}, 0.0);
  CHECK_THROWS_AS(softmax_xent(logits, {3}, nullptr), std::invalid_argument);
}

TEST_CASE("sum_all backward seeds ones") {
  Rng rng(17);
  auto x = oracle::random_tensor({1, 2, 2, 2}, rng, -1, 1, true);
  Tape tape;
  auto loss = sum_all(x, &tape);
  tape.backward(loss);
  for (double g : x->grad) CHECK(g == 1.0);
}

TEST_CASE("trivial pointwise identities") {
  Rng rng(23);
  auto x = oracle::random_tensor({1, 1, 3, 3}, rng);
  auto zero = Tensor::create(x->shape, false);
  CHECK(add(x, zero, nullptr)->data == x->data);
  auto half = Tensor::scalar(0.5);
  auto scaled = scale(x, half, nullptr);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    CHECK(scaled->data[i] == doctest::Approx(0.5 * x->data[i]));
  }
  auto r = Tensor::create({1, 1, 1, 2}, false);
  r->data = {-1.0, 2.0};
  auto rr = relu(r, nullptr);
  CHECK(rr->data[0] == 0.0);
  CHECK(rr->data[1] == 2.0);
}

TEST_CASE("batchnorm identity and scalar cases") {
  Rng rng(29);
  auto x = oracle::random_tensor({1, 2, 3, 3}, rng);
  BNParams bn = make_batchnorm(2, 1e-12);
  bn.train = false;
  auto y = batchnorm(x, bn, nullptr);
  CHECK(oracle::max_abs_diff(y, x) <= 1e-10);

  // gamma=2, beta=0.5, mean=1, var=3, eps=1 on constant 1 -> 0.5
  BNParams bn2 = make_batchnorm(1, 1.0);
  bn2.train = false;
  bn2.gamma->data[0] = 2.0;
  bn2.beta->data[0] = 0.5;
  bn2.running_mean[0] = 1.0;
  bn2.running_var[0] = 3.0;
  auto c = Tensor::fill({1, 1, 2, 2}, 1.0);
  auto yc = batchnorm(c, bn2, nullptr);
  for (double v : yc->data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("train-mode batchnorm zeroes the per-channel mean") {
  Rng rng(31);
  auto x = oracle::random_tensor({3, 2, 4, 4}, rng);
  BNParams bn = make_batchnorm(2);
  auto y = batchnorm(x, bn, nullptr);  // gamma 1, beta 0: output is xhat
  for (int c = 0; c < 2; ++c) {
    double s = 0.0;
    for (int n = 0; n < 3; ++n) {
      for (int h = 0; h < 4; ++h) {
        for (int w = 0; w < 4; ++w) s += y->at(n, c, h, w);
      }
    }
    CHECK(std::abs(s / (3 * 4 * 4)) <= 1e-10);
  }
  CHECK(bn.stats_ready);
}

TEST_CASE("batchnorm rejects channel mismatch and bad eps") {
  auto x = Tensor::fill({1, 3, 2, 2}, 1.0);
  BNParams bn = make_batchnorm(2);
  CHECK_THROWS_AS(batchnorm(x, bn, nullptr), std::invalid_argument);
  BNParams bad = make_batchnorm(3);
  bad.eps = 0.0;
  CHECK_THROWS_AS(batchnorm(x, bad, nullptr), std::invalid_argument);
}

TEST_CASE("conv2d names the offending dimension on mismatch") {
  auto x = Tensor::fill({1, 3, 4, 4}, 1.0);
  ConvParams p;
  p.weight = Tensor::fill({2, 2, 3, 3}, 0.1);
  try {
    conv2d(x, p, nullptr);
    CHECK(false);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("channels") != std::string::npos);
  }
  ConvParams big;
  big.weight = Tensor::fill({1, 3, 7, 7}, 0.1);
  CHECK_THROWS_AS(conv2d(x, big, nullptr), std::invalid_argument);
}

TEST_CASE("gradients accumulate across shared uses") {
  Rng rng(37);
  auto x = oracle::random_tensor({1, 2, 4, 4}, rng, -1, 1, true);
  ConvParams p1, p2;
  p1.weight = oracle::random_tensor({2, 2, 3, 3}, rng, -1, 1, false);
  p1.padding = {1, 1};
  p2.weight = oracle::random_tensor({2, 2, 3, 3}, rng, -1, 1, false);
  p2.padding = {1, 1};

  Tape tape;
  auto y = add(conv2d(x, p1, &tape), conv2d(x, p2, &tape), &tape);
  auto loss = sum_all(y, &tape);
  tape.backward(loss);

  // duplicated-input oracle: two disjoint copies, gradients summed by hand
  auto xa = Tensor::from(x->shape, x->data, true);
  auto xb = Tensor::from(x->shape, x->data, true);
  Tape ta;
  auto la = sum_all(conv2d(xa, p1, &ta), &ta);
  ta.backward(la);
  Tape tb;
  auto lb = sum_all(conv2d(xb, p2, &tb), &tb);
  tb.backward(lb);
  for (std::size_t i = 0; i < x->grad.size(); ++i) {
    CHECK(x->grad[i] == doctest::Approx(xa->grad[i] + xb->grad[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d is linear in its input for bias-free kernels") {
  Rng rng(41);
  auto x = oracle::random_tensor({1, 2, 5, 5}, rng);
  auto y = oracle::random_tensor({1, 2, 5, 5}, rng);
  ConvParams p;
  p.weight = oracle::random_tensor({3, 2, 3, 3}, rng);
  p.padding = {1, 1};
  const double a = 0.7, b = -1.3;
  auto mix = Tensor::create(x->shape, false);
  for (std::size_t i = 0; i < mix->data.size(); ++i) {
    mix->data[i] = a * x->data[i] + b * y->data[i];
  }
  auto lhs = conv2d(mix, p, nullptr);
  auto cx = conv2d(x, p, nullptr);
  auto cy = conv2d(y, p, nullptr);
  double worst = 0.0;
  for (std::size_t i = 0; i < lhs->data.size(); ++i) {
    worst = std::max(worst, std::abs(lhs->data[i] - (a * cx->data[i] + b * cy->data[i])));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("backward on a detached tensor is an error") {
  auto x = Tensor::fill({1, 1, 1, 1}, 1.0, false);
  Tape tape;
  auto y = relu(x, &tape);  // nothing recorded: no grad anywhere
  CHECK_THROWS_AS(tape.backward(y), std::logic_error);
}

TEST_CASE("forward results are bitwise deterministic") {
  Rng rng(43);
  auto x = oracle::random_tensor({2, 3, 8, 8}, rng);
  ConvParams p;
  p.weight = oracle::random_tensor({4, 3, 3, 3}, rng);
  p.padding = {1, 1};
  auto y1 = conv2d(x, p, nullptr);
  auto y2 = conv2d(x, p, nullptr);
  CHECK(y1->data == y2->data);
}

}  // TEST_SUITE
