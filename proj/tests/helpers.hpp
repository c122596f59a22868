// Shared test utilities for randomizing networks into plausible eval-mode
// states without running any training.
#pragma once

#include "irep/rng.hpp"
#include "irep/supernet.hpp"
#include "oracles.hpp"

namespace testing_helpers {

using namespace irep;

inline void randomize_bn_inplace(BNParams& bn, Rng& rng) {
  for (int c = 0; c < bn.channels(); ++c) {
    bn.gamma->data[c] = rng.uniform(0.5, 1.5);
    bn.beta->data[c] = rng.uniform(-0.5, 0.5);
    bn.running_mean[c] = rng.uniform(-0.5, 0.5);
    bn.running_var[c] = rng.uniform(0.2, 1.5);
  }
  bn.stats_ready = true;
}

inline void randomize_conv_inplace(ConvParams& conv, Rng& rng) {
  for (double& v : conv.weight->data) v = rng.uniform(-1.0, 1.0);
  if (conv.bias) {
    for (double& v : conv.bias->data) v = rng.uniform(-0.5, 0.5);
  }
}

inline void randomize_block(BlockSpec& block, Rng& rng) {
  randomize_conv_inplace(block.fixed, rng);
  randomize_bn_inplace(block.fixed_bn, rng);
  block.beta->data[0] = rng.uniform(-2.0, 2.0);
  for (Candidate& c : block.candidates) {
    c.alpha->data[0] = rng.uniform(-2.0, 2.0);
    if (c.kind == KernelKind::identity) continue;
    randomize_conv_inplace(c.conv, rng);
    randomize_bn_inplace(c.bn, rng);
    if (c.conv2) {
      randomize_conv_inplace(*c.conv2, rng);
      randomize_bn_inplace(*c.bn2, rng);
    }
  }
}

inline void randomize_supernet(SuperNet& net, Rng& rng) {
  for (BlockSpec& b : net.blocks) randomize_block(b, rng);
  for (Layer& l : net.layers) {
    if (l.op == Layer::Op::transition || l.op == Layer::Op::head) {
      randomize_conv_inplace(l.conv, rng);
    }
  }
  net.set_train(false);
}

// standalone block outside any network
inline BlockSpec make_random_block(int in_c, int out_c, bool with_identity, Rng& rng) {
  NetConfig cfg;
  cfg.arch = with_identity ? ArchKind::vgg_small : ArchKind::resnet_small;
  cfg.widths = {out_c};
  cfg.in_channels = in_c;
  cfg.classes = 2;
  cfg.init_seed = rng.next_u64();
  SuperNet net = build_supernet(cfg);
  BlockSpec block = std::move(net.blocks[0]);
  // the builder wires blocks as width->width; rebuild the first conv stage
  // shapes for in_c != out_c by hand
  if (in_c != out_c) {
    Rng wr(rng.next_u64());
    block.in_ch = in_c;
    block.fixed.weight = oracle::random_tensor({out_c, in_c, 3, 3}, wr);
    std::erase_if(block.candidates,
                  [](const Candidate& c) { return c.kind == KernelKind::identity; });
    for (Candidate& c : block.candidates) {
      const Shape4 s = c.conv.weight->shape;
      c.conv.weight = oracle::random_tensor({s.n, in_c, s.h, s.w}, wr);
    }
  }
  randomize_block(block, rng);
  block.fixed_bn.train = false;
  for (Candidate& c : block.candidates) {
    c.bn.train = false;
    if (c.bn2) c.bn2->train = false;
  }
  return block;
}

// eval-mode forward of one block, straight off the gated-sum definition
inline TensorPtr block_eval_forward(BlockSpec& block, const TensorPtr& x,
                                    const std::vector<std::uint8_t>& mask) {
  return block_forward(block, x, std::span<const std::uint8_t>(mask.data(), mask.size()),
                       nullptr);
}

}  // namespace testing_helpers
