#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "irep/reparam.hpp"
#include "irep/supernet.hpp"
#include "oracles.hpp"

using namespace irep;
using testing_helpers::make_random_block;
using testing_helpers::randomize_bn_inplace;

namespace {

const std::vector<KernelKind> kSingleConvKinds = {
    KernelKind::conv1x1, KernelKind::conv1x3, KernelKind::conv3x1,
    KernelKind::dil1x2,  KernelKind::dil2x1,  KernelKind::dil2x2,
};

TensorPtr conv_fused(const TensorPtr& x, const FusedConv& f) {
  ConvParams p;
  p.weight = f.weight;
  p.bias = Tensor::from({1, static_cast<int>(f.bias.size()), 1, 1}, f.bias);
  p.padding = {1, 1};
  p.stride = {f.stride, f.stride};
  return conv2d(x, p, nullptr);
}

}  // namespace

TEST_SUITE("reparam") {

TEST_CASE("fuse_conv_bn identity statistics leave the kernel unchanged") {
  Rng rng(1);
  ConvParams conv;
  conv.weight = oracle::random_tensor({2, 3, 3, 3}, rng);
  BNParams bn = make_batchnorm(2);
  bn.train = false;
  bn.eps = 0.0;  // identity case from the definition
  auto [w, b] = fuse_conv_bn(conv, bn);
  CHECK(w->data == conv.weight->data);
  for (double v : b) CHECK(v == 0.0);
}

TEST_CASE("fuse_conv_bn scalar case: scale 1, bias -0.5") {
  Rng rng(2);
  ConvParams conv;
  conv.weight = oracle::random_tensor({1, 2, 3, 3}, rng);
  BNParams bn = make_batchnorm(1, 1.0);
  bn.train = false;
  bn.gamma->data[0] = 2.0;
  bn.beta->data[0] = 0.5;
  bn.running_mean[0] = 1.0;
  bn.running_var[0] = 3.0;
  auto [w, b] = fuse_conv_bn(conv, bn);
  for (std::size_t i = 0; i < w->data.size(); ++i) {
    CHECK(w->data[i] == doctest::Approx(conv.weight->data[i]).epsilon(1e-14));
  }
  CHECK(b[0] == doctest::Approx(-0.5).epsilon(1e-14));
}

TEST_CASE("fuse_conv_bn forward equivalence on random weights") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    ConvParams conv;
    conv.weight = oracle::random_tensor({3, 2, 3, 3}, rng);
    if (trial % 2) conv.bias = oracle::random_tensor({1, 3, 1, 1}, rng);
    conv.padding = {1, 1};
    BNParams bn = oracle::random_bn(3, rng);
    auto x = oracle::random_tensor({2, 2, 6, 6}, rng);
    auto want = batchnorm(conv2d(x, conv, nullptr), bn, nullptr);
    auto [w, b] = fuse_conv_bn(conv, bn);
    ConvParams fused = conv;
    fused.weight = w;
    fused.bias = Tensor::from({1, 3, 1, 1}, b);
    auto got = conv2d(x, fused, nullptr);
    CHECK(oracle::max_abs_diff(got, want) <= 1e-10);
  }
}

TEST_CASE("fuse_conv_bn rejects train-mode batchnorm") {
  ConvParams conv;
  conv.weight = Tensor::fill({1, 1, 3, 3}, 0.1);
  BNParams bn = make_batchnorm(1);
  bn.train = true;
  CHECK_THROWS_AS(fuse_conv_bn(conv, bn), std::invalid_argument);
}

TEST_CASE("embed placements: dilated 1x2 lands on (1,0) and (1,2)") {
  auto k = Tensor::create({1, 1, 1, 2}, false);
  k->data = {3.0, 5.0};
  auto e = embed_to_3x3(k, KernelKind::dil1x2);
  CHECK(e->at(0, 0, 1, 0) == 3.0);
  CHECK(e->at(0, 0, 1, 2) == 5.0);
  double sum = 0.0;
  for (double v : e->data) sum += std::abs(v);
  CHECK(sum == 8.0);
}

TEST_CASE("embed placements: 1x1 goes to the center") {
  auto k = Tensor::fill({2, 2, 1, 1}, 0.0);
  k->at(0, 1, 0, 0) = 7.0;
  auto e = embed_to_3x3(k, KernelKind::conv1x1);
  CHECK(e->at(0, 1, 1, 1) == 7.0);
  CHECK(e->at(0, 0, 1, 1) == 0.0);
}

TEST_CASE("native conv equals embedded 3x3 conv for every kind, 30 inputs") {
  Rng rng(4);
  for (KernelKind kind : kSingleConvKinds) {
    const KindGeom g = kind_geom(kind);
    auto kernel = oracle::random_tensor({3, 2, g.k_h, g.k_w}, rng);
    auto embedded = embed_to_3x3(kernel, kind);
    for (int trial = 0; trial < 30; ++trial) {
      auto x = oracle::random_tensor({1, 2, 7, 7}, rng);
      auto native = oracle::conv2d(x, kernel, {}, 1, 1, g.p_h, g.p_w, g.d_h, g.d_w);
      auto via3x3 = oracle::conv2d(x, embedded, {}, 1, 1, 1, 1, 1, 1);
      CHECK(oracle::max_abs_diff(native, via3x3) <= 1e-12);
    }
  }
}

TEST_CASE("identity kernel embeds as a channel-diagonal center") {
  auto e = identity_kernel_3x3(3, 3);
  for (int o = 0; o < 3; ++o) {
    for (int i = 0; i < 3; ++i) {
      CHECK(e->at(o, i, 1, 1) == (o == i ? 1.0 : 0.0));
    }
  }
  Rng rng(5);
  auto x = oracle::random_tensor({1, 3, 5, 5}, rng);
  auto y = oracle::conv2d(x, e, {}, 1, 1, 1, 1, 1, 1);
  CHECK(oracle::max_abs_diff(y, x) == 0.0);
  CHECK_THROWS_AS(identity_kernel_3x3(2, 3), std::invalid_argument);
}

TEST_CASE("embed rejects mismatched kinds") {
  auto k = Tensor::fill({1, 1, 1, 2}, 1.0);
  CHECK_THROWS_AS(embed_to_3x3(k, KernelKind::conv3x1), std::invalid_argument);
}

TEST_CASE("fuse_sequential scalar cases") {
  Rng rng(6);
  auto w3 = oracle::random_tensor({1, 1, 3, 3}, rng);
  auto w1 = Tensor::fill({1, 1, 1, 1}, 2.0);
  auto [w, b] = fuse_sequential_1x1_kxk(w1, {0.3}, w3, {0.1});
  double tap_sum = 0.0;
  for (std::size_t i = 0; i < w3->data.size(); ++i) {
    CHECK(w->data[i] == doctest::Approx(2.0 * w3->data[i]).epsilon(1e-14));
    tap_sum += w3->data[i];
  }
  CHECK(b[0] == doctest::Approx(0.1 + tap_sum * 0.3).epsilon(1e-12));

  // channel-identity first stage passes the second stage through
  auto eye = Tensor::create({2, 2, 1, 1}, false);
  eye->at(0, 0, 0, 0) = 1.0;
  eye->at(1, 1, 0, 0) = 1.0;
  auto w3b = oracle::random_tensor({2, 2, 3, 3}, rng);
  auto [wi, bi] = fuse_sequential_1x1_kxk(eye, {0.0, 0.0}, w3b, {0.4, -0.2});
  CHECK(wi->data == w3b->data);
  CHECK(bi[0] == 0.4);
  CHECK(bi[1] == -0.2);
}

TEST_CASE("fuse_sequential forward equivalence with pad before the 3x3 stage") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    auto w1 = oracle::random_tensor({3, 2, 1, 1}, rng);
    std::vector<double> b1 = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto w3 = oracle::random_tensor({2, 3, 3, 3}, rng);
    std::vector<double> b3 = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto x = oracle::random_tensor({1, 2, 6, 6}, rng);
    // sequential: padded 1x1 stage, then an unpadded 3x3 stage
    auto mid = oracle::conv2d(x, w1, b1, 1, 1, 1, 1, 1, 1);
    auto want = oracle::conv2d(mid, w3, b3, 1, 1, 0, 0, 1, 1);
    auto [w, b] = fuse_sequential_1x1_kxk(w1, b1, w3, b3);
    auto got = oracle::conv2d(x, w, b, 1, 1, 1, 1, 1, 1);
    CHECK(oracle::max_abs_diff(got, want) <= 1e-10);
  }
}

TEST_CASE("fuse_sequential rejects channel mismatch") {
  auto w1 = Tensor::fill({2, 1, 1, 1}, 1.0);
  auto w3 = Tensor::fill({1, 3, 3, 3}, 1.0);
  CHECK_THROWS_AS(fuse_sequential_1x1_kxk(w1, {0, 0}, w3, {0}), std::invalid_argument);
}

TEST_CASE("avgpool_to_conv is the diagonal mean kernel") {
  auto k = avgpool_to_conv(3, 2);
  for (int o = 0; o < 2; ++o) {
    for (int i = 0; i < 2; ++i) {
      for (int u = 0; u < 3; ++u) {
        for (int v = 0; v < 3; ++v) {
          CHECK(k->at(o, i, u, v) == (o == i ? 1.0 / 9.0 : 0.0));
        }
      }
    }
  }
  CHECK_THROWS_AS(avgpool_to_conv(2, 1), std::invalid_argument);

  Rng rng(8);
  auto x = oracle::random_tensor({2, 2, 5, 5}, rng);
  auto via_conv = oracle::conv2d(x, k, {}, 1, 1, 1, 1, 1, 1);
  auto via_pool = avgpool2d(x, 3, 1, 1, nullptr);
  CHECK(oracle::max_abs_diff(via_conv, via_pool) <= 1e-15);
}

TEST_CASE("merge_parallel basics") {
  Rng rng(9);
  auto w = oracle::random_tensor({2, 2, 3, 3}, rng);
  std::vector<double> b = {0.5, -0.25};
  auto one = merge_parallel({{w, b}}, {1.0});
  CHECK(one.weight->data == w->data);
  CHECK(one.bias == b);

  auto convex = merge_parallel({{w, b}, {w, b}}, {0.5, 0.5});
  CHECK(oracle::max_abs_diff(convex.weight, w) <= 1e-15);

  CHECK_THROWS_AS(merge_parallel({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(merge_parallel({{w, b}}, {std::nan("")}), std::invalid_argument);
}

TEST_CASE("merge_parallel equals the gated multi-branch sum on 4 branches") {
  Rng rng(10);
  std::vector<std::pair<TensorPtr, std::vector<double>>> branches;
  std::vector<double> gates;
  for (int j = 0; j < 4; ++j) {
    branches.push_back(
        {oracle::random_tensor({2, 3, 3, 3}, rng), {rng.uniform(-1, 1), rng.uniform(-1, 1)}});
    gates.push_back(rng.uniform(0.0, 1.0));
  }
  const FusedConv fused = merge_parallel(branches, gates);
  auto x = oracle::random_tensor({1, 3, 6, 6}, rng);
  auto want = Tensor::create({1, 2, 6, 6}, false);
  for (int j = 0; j < 4; ++j) {
    auto y = oracle::conv2d(x, branches[j].first, branches[j].second, 1, 1, 1, 1, 1, 1);
    for (std::size_t i = 0; i < want->data.size(); ++i) {
      want->data[i] += gates[j] * y->data[i];
    }
  }
  auto got = conv_fused(x, fused);
  CHECK(oracle::max_abs_diff(got, want) <= 1e-10);
}

TEST_CASE("zero mask fuses to the plain Conv-BN fixed op") {
  Rng rng(11);
  BlockSpec block = make_random_block(3, 3, true, rng);
  const FusedConv fused =
      reparameterize_block(block, std::vector<std::uint8_t>(block.candidates.size(), 0));
  auto [w, b] = fuse_conv_bn(block.fixed, block.fixed_bn);
  CHECK(fused.weight->data == w->data);
  CHECK(fused.bias == b);
}

TEST_CASE("identity-only mask in the saturated-gate limit adds a center one") {
  Rng rng(12);
  BlockSpec block = make_random_block(4, 4, true, rng);
  block.beta->data[0] = 40.0;  // sigmoid(40) = 1 up to ~4e-18
  std::vector<std::uint8_t> mask(block.candidates.size(), 0);
  for (std::size_t j = 0; j < block.candidates.size(); ++j) {
    if (block.candidates[j].kind == KernelKind::identity) {
      mask[j] = 1;
      block.candidates[j].alpha->data[0] = 40.0;
    }
  }
  const FusedConv fused = reparameterize_block(block, mask);
  auto [w, b] = fuse_conv_bn(block.fixed, block.fixed_bn);
  auto eye = identity_kernel_3x3(4, 4);
  double worst = 0.0;
  for (std::size_t i = 0; i < w->data.size(); ++i) {
    worst = std::max(worst, std::abs(fused.weight->data[i] - (w->data[i] + eye->data[i])));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("random blocks and masks: multi-branch forward equals fused forward") {
  Rng rng(13);
  for (int trial = 0; trial < 12; ++trial) {
    const int in_c = 2 + static_cast<int>(rng.below(3));
    const bool same = trial % 2 == 0;
    const int out_c = same ? in_c : 2 + static_cast<int>(rng.below(3));
    BlockSpec block = make_random_block(in_c, out_c, same, rng);
    std::vector<std::uint8_t> mask(block.candidates.size());
    for (auto& m : mask) m = rng.below(2) ? 1 : 0;
    const FusedConv fused = reparameterize_block(block, mask);
    for (int input = 0; input < 3; ++input) {
      auto x = oracle::random_tensor({2, in_c, 6, 6}, rng);
      auto want = testing_helpers::block_eval_forward(block, x, mask);
      auto got = conv_fused(x, fused);
      CHECK(oracle::max_abs_diff(got, want) <= 1e-9);
    }
  }
}

TEST_CASE("fusing batchnorm before or after embedding is identical") {
  Rng rng(14);
  for (KernelKind kind : kSingleConvKinds) {
    const KindGeom g = kind_geom(kind);
    ConvParams conv;
    conv.weight = oracle::random_tensor({3, 3, g.k_h, g.k_w}, rng);
    conv.padding = {g.p_h, g.p_w};
    conv.dilation = {g.d_h, g.d_w};
    BNParams bn = oracle::random_bn(3, rng);

    auto [w_then_embed, b1] = fuse_conv_bn(conv, bn);
    auto a = embed_to_3x3(w_then_embed, kind);

    ConvParams embedded = conv;
    embedded.weight = embed_to_3x3(conv.weight, kind);
    embedded.padding = {1, 1};
    embedded.dilation = {1, 1};
    auto [b_embed_then_bn, b2] = fuse_conv_bn(embedded, bn);

    CHECK(oracle::max_abs_diff(a, b_embed_then_bn) <= 1e-12);
    for (std::size_t i = 0; i < b1.size(); ++i) {
      CHECK(std::abs(b1[i] - b2[i]) <= 1e-12);
    }
  }
}

TEST_CASE("a branch with gate zero contributes nothing") {
  Rng rng(15);
  auto w_fixed = oracle::random_tensor({2, 2, 3, 3}, rng);
  auto w_extra = oracle::random_tensor({2, 2, 3, 3}, rng);
  std::vector<double> b_fixed = {0.1, -0.2}, b_extra = {0.7, 0.4};
  auto with_zero = merge_parallel({{w_fixed, b_fixed}, {w_extra, b_extra}}, {1.0, 0.0});
  auto without = merge_parallel({{w_fixed, b_fixed}}, {1.0});
  CHECK(with_zero.weight->data == without.weight->data);
  CHECK(with_zero.bias == without.bias);
}

TEST_CASE("property: 100 random blocks over all kinds stay within 1e-9") {
  Rng rng(16);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(2));
    BlockSpec block = make_random_block(c, c, true, rng);
    std::vector<std::uint8_t> mask(block.candidates.size());
    for (auto& m : mask) m = rng.below(2) ? 1 : 0;
    if (trial == 0) std::fill(mask.begin(), mask.end(), 1);
    if (trial == 1) std::fill(mask.begin(), mask.end(), 0);
    const FusedConv fused = reparameterize_block(block, mask);
    auto x = oracle::random_tensor({1, c, 5, 5}, rng);
    auto want = testing_helpers::block_eval_forward(block, x, mask);
    auto got = conv_fused(x, fused);
    CHECK(oracle::max_abs_diff(got, want) <= 1e-9);
    ++checked;
  }
  CHECK(checked == 100);
}

}  // TEST_SUITE
