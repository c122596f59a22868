#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "irep/autodiff.hpp"
#include "irep/tensor.hpp"

namespace irep {

// Candidate branch vocabulary. Every kind collapses into a 3x3 convolution
// whose receptive-field center coincides with the fixed 3x3 op.
enum class KernelKind : int {
  conv3x3_fixed = 0,
  conv1x1,
  conv1x3,
  conv3x1,
  dil1x2,
  dil2x1,
  dil2x2,
  seq1x1_3x3,
  avg1x1_pool3,
  identity,
};

const char* kind_name(KernelKind k);

// Kernel size, dilation and zero-padding of a kind's single-conv form.
// Within a block every kind runs at stride 1 and preserves H x W.
struct KindGeom {
  int k_h, k_w, d_h, d_w, p_h, p_w;
};
KindGeom kind_geom(KernelKind k);

// Single 3x3 convolution (stride 1, pad 1) equivalent to a whole block.
struct FusedConv {
  TensorPtr weight;          // (out_c, in_c, 3, 3)
  std::vector<double> bias;  // out_c
  int stride = 1;
};

// Folds eval-mode batchnorm into the preceding convolution:
//   w' = w * gamma / sqrt(var + eps)   (per output channel)
//   b' = beta - gamma * mean / sqrt(var + eps) + b * gamma / sqrt(var + eps)
std::pair<TensorPtr, std::vector<double>> fuse_conv_bn(const ConvParams& conv,
                                                       const BNParams& bn);

// Places a smaller or dilated kernel at its center-aligned positions of a
// zero 3x3 kernel. Kernels that are already 3x3 pass through unchanged.
TensorPtr embed_to_3x3(const TensorPtr& kernel, KernelKind kind);

// Channel-diagonal 3x3 kernel with 1 at the center: the identity branch.
TensorPtr identity_kernel_3x3(int in_c, int out_c);

// Collapses conv1x1 (+bias) followed by a KxK conv (+bias) into one KxK conv:
//   w'[o,i,u,v] = sum_m w2[o,m,u,v] * w1[m,i]
//   b'[o]       = b2[o] + sum_m sum_{u,v} w2[o,m,u,v] * b1[m]
std::pair<TensorPtr, std::vector<double>> fuse_sequential_1x1_kxk(
    const TensorPtr& w1, const std::vector<double>& b1, const TensorPtr& w2,
    const std::vector<double>& b2);

// (C, C, k, k) kernel with 1/k^2 on the channel diagonal; equals k x k
// average pooling with the same stride and padding.
TensorPtr avgpool_to_conv(int k, int channels);

// weight = sum_j gate_j * w_j, bias = sum_j gate_j * b_j
FusedConv merge_parallel(const std::vector<std::pair<TensorPtr, std::vector<double>>>& branches,
                         const std::vector<double>& gates);

struct BlockSpec;
struct SuperNet;
struct SubnetMask;
struct PlainNet;

// Collapses one gated block under a candidate mask: per active branch
// fuse_conv_bn -> (fuse_sequential for the two-stage kinds) -> embed_to_3x3,
// gated by sigmoid(alpha) * sigmoid(beta); the fixed path enters with gate 1.
FusedConv reparameterize_block(const BlockSpec& block, std::span<const std::uint8_t> mask_bits);

// Replaces every block by its FusedConv; plumbing layers are copied verbatim.
PlainNet reparameterize_network(const SuperNet& net, const SubnetMask& mask);

}  // namespace irep
