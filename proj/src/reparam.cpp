#include "irep/reparam.hpp"

#include <cmath>
#include <stdexcept>

#include "irep/supernet.hpp"

namespace irep {

const char* kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::conv3x3_fixed: return "3x3";
    case KernelKind::conv1x1: return "1x1";
    case KernelKind::conv1x3: return "1x3";
    case KernelKind::conv3x1: return "3x1";
    case KernelKind::dil1x2: return "1x2d";
    case KernelKind::dil2x1: return "2x1d";
    case KernelKind::dil2x2: return "2x2d";
    case KernelKind::seq1x1_3x3: return "1x1-3x3";
    case KernelKind::avg1x1_pool3: return "1x1-avg";
    case KernelKind::identity: return "identity";
  }
  return "?";
}

KindGeom kind_geom(KernelKind k) {
  switch (k) {
    case KernelKind::conv3x3_fixed: return {3, 3, 1, 1, 1, 1};
    case KernelKind::conv1x1: return {1, 1, 1, 1, 0, 0};
    case KernelKind::conv1x3: return {1, 3, 1, 1, 0, 1};
    case KernelKind::conv3x1: return {3, 1, 1, 1, 1, 0};
    case KernelKind::dil1x2: return {1, 2, 1, 2, 0, 1};
    case KernelKind::dil2x1: return {2, 1, 2, 1, 1, 0};
    case KernelKind::dil2x2: return {2, 2, 2, 2, 1, 1};
    default:
      throw std::invalid_argument(std::string("kind_geom: no single-conv form for ") +
                                  kind_name(k));
  }
}

std::pair<TensorPtr, std::vector<double>> fuse_conv_bn(const ConvParams& conv,
                                                       const BNParams& bn) {
  if (bn.train) {
    throw std::invalid_argument(
        "fuse_conv_bn: train-mode batchnorm cannot be fused (batch statistics)");
  }
  const int out_c = conv.out_channels();
  if (bn.channels() != out_c) {
    throw std::invalid_argument("fuse_conv_bn: " + std::to_string(bn.channels()) +
                                " batchnorm channels for " + std::to_string(out_c) +
                                " conv outputs");
  }
  auto w = conv.weight->clone();
  std::vector<double> b(out_c, 0.0);
  const long long per_out = w->numel() / out_c;
  for (int o = 0; o < out_c; ++o) {
    const double gamma = bn.gamma->data[o];
    const double s = gamma / std::sqrt(bn.running_var[o] + bn.eps);
    double* wp = w->data.data() + per_out * o;
    for (long long i = 0; i < per_out; ++i) wp[i] *= s;
    b[o] = bn.beta->data[o] - s * bn.running_mean[o];
    if (conv.bias) b[o] += s * conv.bias->data[o];
  }
  return {w, b};
}

TensorPtr embed_to_3x3(const TensorPtr& kernel, KernelKind kind) {
  if (kind == KernelKind::identity) {
    throw std::invalid_argument("embed_to_3x3: identity branch has no kernel, use identity_kernel_3x3");
  }
  if (kernel->shape.h == 3 && kernel->shape.w == 3) {
    if (kind == KernelKind::conv3x3_fixed || kind == KernelKind::seq1x1_3x3 ||
        kind == KernelKind::avg1x1_pool3) {
      return kernel->clone();
    }
  }
  const KindGeom g = kind_geom(kind);
  if (kernel->shape.h != g.k_h || kernel->shape.w != g.k_w) {
    throw std::invalid_argument(std::string("embed_to_3x3: kernel ") + kernel->shape.str() +
                                " does not match kind " + kind_name(kind));
  }
  const int out_c = kernel->shape.n, in_c = kernel->shape.c;
  auto out = Tensor::create({out_c, in_c, 3, 3}, false);
  for (int o = 0; o < out_c; ++o) {
    for (int i = 0; i < in_c; ++i) {
      for (int kh = 0; kh < g.k_h; ++kh) {
        // center alignment: a tap at input offset k*d - p lands at 3x3
        // position k*d + 1 - p
        const int th = kh * g.d_h + 1 - g.p_h;
        for (int kw = 0; kw < g.k_w; ++kw) {
          const int tw = kw * g.d_w + 1 - g.p_w;
          out->at(o, i, th, tw) = kernel->at(o, i, kh, kw);
        }
      }
    }
  }
  return out;
}

TensorPtr identity_kernel_3x3(int in_c, int out_c) {
  if (in_c != out_c) {
    throw std::invalid_argument("identity branch requires matching channels, got " +
                                std::to_string(in_c) + "->" + std::to_string(out_c));
  }
  auto out = Tensor::create({out_c, in_c, 3, 3}, false);
  for (int c = 0; c < out_c; ++c) out->at(c, c, 1, 1) = 1.0;
  return out;
}

std::pair<TensorPtr, std::vector<double>> fuse_sequential_1x1_kxk(
    const TensorPtr& w1, const std::vector<double>& b1, const TensorPtr& w2,
    const std::vector<double>& b2) {
  const int mid = w1->shape.n, in_c = w1->shape.c;
  const int out_c = w2->shape.n, kh = w2->shape.h, kw = w2->shape.w;
  if (w1->shape.h != 1 || w1->shape.w != 1) {
    throw std::invalid_argument("fuse_sequential: first stage must be 1x1, got " +
                                w1->shape.str());
  }
  if (w2->shape.c != mid) {
    throw std::invalid_argument("fuse_sequential: mid channels " + std::to_string(w2->shape.c) +
                                " != " + std::to_string(mid));
  }
  if (static_cast<int>(b1.size()) != mid || static_cast<int>(b2.size()) != out_c) {
    throw std::invalid_argument("fuse_sequential: bias length mismatch");
  }
  auto w = Tensor::create({out_c, in_c, kh, kw}, false);
  std::vector<double> b(b2);
  for (int o = 0; o < out_c; ++o) {
    for (int m = 0; m < mid; ++m) {
      double tap_sum = 0.0;
      for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
          const double w2v = w2->at(o, m, u, v);
          tap_sum += w2v;
          for (int i = 0; i < in_c; ++i) {
            w->at(o, i, u, v) += w2v * w1->at(m, i, 0, 0);
          }
        }
      }
      b[o] += tap_sum * b1[m];
    }
  }
  return {w, b};
}

TensorPtr avgpool_to_conv(int k, int channels) {
  if (k < 1 || k % 2 == 0) {
    throw std::invalid_argument("avgpool_to_conv: kernel must be odd, got " + std::to_string(k));
  }
  auto out = Tensor::create({channels, channels, k, k}, false);
  const double v = 1.0 / (static_cast<double>(k) * k);
  for (int c = 0; c < channels; ++c) {
    for (int u = 0; u < k; ++u) {
      for (int w = 0; w < k; ++w) out->at(c, c, u, w) = v;
    }
  }
  return out;
}

FusedConv merge_parallel(const std::vector<std::pair<TensorPtr, std::vector<double>>>& branches,
                         const std::vector<double>& gates) {
  if (branches.empty()) throw std::invalid_argument("merge_parallel: empty branch list");
  if (branches.size() != gates.size()) {
    throw std::invalid_argument("merge_parallel: " + std::to_string(gates.size()) +
                                " gates for " + std::to_string(branches.size()) + " branches");
  }
  const Shape4 shape = branches[0].first->shape;
  FusedConv fused;
  fused.weight = Tensor::create(shape, false);
  fused.bias.assign(branches[0].second.size(), 0.0);
  for (std::size_t j = 0; j < branches.size(); ++j) {
    const auto& [w, b] = branches[j];
    if (!(w->shape == shape) || b.size() != fused.bias.size()) {
      throw std::invalid_argument("merge_parallel: branch " + std::to_string(j) +
                                  " shape mismatch");
    }
    const double g = gates[j];
    if (!std::isfinite(g)) {
      throw std::invalid_argument("merge_parallel: non-finite gate at branch " +
                                  std::to_string(j));
    }
    for (std::size_t i = 0; i < w->data.size(); ++i) fused.weight->data[i] += g * w->data[i];
    for (std::size_t i = 0; i < b.size(); ++i) fused.bias[i] += g * b[i];
  }
  return fused;
}

FusedConv reparameterize_block(const BlockSpec& block, std::span<const std::uint8_t> mask_bits) {
  if (mask_bits.size() != block.candidates.size()) {
    throw std::invalid_argument("reparameterize_block: mask length " +
                                std::to_string(mask_bits.size()) + " != candidate count " +
                                std::to_string(block.candidates.size()));
  }
  std::vector<std::pair<TensorPtr, std::vector<double>>> branches;
  std::vector<double> gates;
  auto fixed = fuse_conv_bn(block.fixed, block.fixed_bn);
  branches.push_back({embed_to_3x3(fixed.first, KernelKind::conv3x3_fixed), fixed.second});
  gates.push_back(1.0);
  const double beta_gate = sigmoid_value(block.beta->data[0]);
  for (std::size_t j = 0; j < block.candidates.size(); ++j) {
    if (!mask_bits[j]) continue;
    const Candidate& c = block.candidates[j];
    std::pair<TensorPtr, std::vector<double>> wb;
    switch (c.kind) {
      case KernelKind::identity:
        wb = {identity_kernel_3x3(block.in_ch, block.out_ch),
              std::vector<double>(block.out_ch, 0.0)};
        break;
      case KernelKind::seq1x1_3x3: {
        auto s1 = fuse_conv_bn(c.conv, c.bn);
        auto s2 = fuse_conv_bn(*c.conv2, *c.bn2);
        wb = fuse_sequential_1x1_kxk(s1.first, s1.second, s2.first, s2.second);
        wb.first = embed_to_3x3(wb.first, c.kind);
        break;
      }
      case KernelKind::avg1x1_pool3: {
        auto s1 = fuse_conv_bn(c.conv, c.bn);
        auto pool = avgpool_to_conv(3, block.out_ch);
        wb = fuse_sequential_1x1_kxk(s1.first, s1.second, pool,
                                     std::vector<double>(block.out_ch, 0.0));
        wb.first = embed_to_3x3(wb.first, c.kind);
        break;
      }
      default: {
        auto s = fuse_conv_bn(c.conv, c.bn);
        wb = {embed_to_3x3(s.first, c.kind), s.second};
        break;
      }
    }
    branches.push_back(std::move(wb));
    gates.push_back(sigmoid_value(c.alpha->data[0]) * beta_gate);
  }
  FusedConv fused = merge_parallel(branches, gates);
  fused.stride = block.stride;
  return fused;
}

PlainNet reparameterize_network(const SuperNet& net, const SubnetMask& mask) {
  if (mask.size() != net.total_branches) {
    throw std::invalid_argument("reparameterize_network: mask length " +
                                std::to_string(mask.size()) + " != total branches " +
                                std::to_string(net.total_branches));
  }
  PlainNet plain;
  plain.in_channels = net.config.in_channels;
  plain.classes = net.config.classes;
  for (const Layer& layer : net.layers) {
    PlainLayer pl;
    switch (layer.op) {
      case Layer::Op::block: {
        const BlockSpec& b = net.blocks[layer.index];
        const int off = net.branch_offset[layer.index];
        FusedConv f = reparameterize_block(
            b, std::span<const std::uint8_t>(mask.bits.data() + off, b.candidates.size()));
        pl.op = PlainLayer::Op::conv;
        pl.conv.weight = f.weight;
        pl.conv.bias = Tensor::from({1, b.out_ch, 1, 1}, f.bias);
        pl.conv.stride = {f.stride, f.stride};
        pl.conv.padding = {1, 1};
        break;
      }
      case Layer::Op::transition:
      case Layer::Op::head:
        pl.op = PlainLayer::Op::conv;
        pl.conv = layer.conv;
        pl.conv.weight = layer.conv.weight->clone();
        if (layer.conv.bias) pl.conv.bias = layer.conv.bias->clone();
        break;
      case Layer::Op::relu: pl.op = PlainLayer::Op::relu; break;
      case Layer::Op::pool2: pl.op = PlainLayer::Op::pool2; break;
      case Layer::Op::global_pool: pl.op = PlainLayer::Op::global_pool; break;
      case Layer::Op::save:
        pl.op = PlainLayer::Op::save;
        pl.index = layer.index;
        break;
      case Layer::Op::add_saved:
        pl.op = PlainLayer::Op::add_saved;
        pl.index = layer.index;
        break;
    }
    plain.layers.push_back(std::move(pl));
  }
  return plain;
}

}  // namespace irep
