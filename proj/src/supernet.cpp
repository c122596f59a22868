#include "irep/supernet.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace irep {

namespace {

const std::vector<KernelKind> kCandidateOrder = {
    KernelKind::conv1x1,  KernelKind::conv1x3,      KernelKind::conv3x1,
    KernelKind::dil1x2,   KernelKind::dil2x1,       KernelKind::dil2x2,
    KernelKind::seq1x1_3x3, KernelKind::avg1x1_pool3, KernelKind::identity,
};

TensorPtr init_conv_weight(Shape4 s, Rng& rng) {
  auto w = Tensor::create(s, true);
  const double fan_in = static_cast<double>(s.c) * s.h * s.w;
  const double std = std::sqrt(2.0 / fan_in);
  for (double& v : w->data) v = std * rng.normal();
  return w;
}

ConvParams make_conv(int in_c, int out_c, const KindGeom& g, int stride, bool bias, Rng& rng) {
  ConvParams p;
  p.weight = init_conv_weight({out_c, in_c, g.k_h, g.k_w}, rng);
  if (bias) p.bias = Tensor::create({1, out_c, 1, 1}, true);
  p.stride = {stride, stride};
  p.padding = {g.p_h, g.p_w};
  p.dilation = {g.d_h, g.d_w};
  return p;
}

Candidate make_candidate(KernelKind kind, int in_c, int out_c, Rng& rng) {
  Candidate c;
  c.kind = kind;
  c.alpha = Tensor::scalar(0.0, true);
  switch (kind) {
    case KernelKind::identity:
      break;
    case KernelKind::seq1x1_3x3:
      // zero-padding sits on the 1x1 stage so the sequential forward matches
      // the fused kernel exactly, borders included
      c.conv = make_conv(in_c, out_c, {1, 1, 1, 1, 1, 1}, 1, false, rng);
      c.bn = make_batchnorm(out_c);
      c.conv2 = make_conv(out_c, out_c, {3, 3, 1, 1, 0, 0}, 1, false, rng);
      c.bn2 = make_batchnorm(out_c);
      break;
    case KernelKind::avg1x1_pool3:
      // same layout: padded 1x1 Conv-BN, then an unpadded 3x3 mean window
      c.conv = make_conv(in_c, out_c, {1, 1, 1, 1, 1, 1}, 1, false, rng);
      c.bn = make_batchnorm(out_c);
      break;
    default:
      c.conv = make_conv(in_c, out_c, kind_geom(kind), 1, false, rng);
      c.bn = make_batchnorm(out_c);
      break;
  }
  return c;
}

BlockSpec make_block(int in_c, int out_c, bool allow_identity, int max_candidates, Rng& rng) {
  BlockSpec b;
  b.in_ch = in_c;
  b.out_ch = out_c;
  b.stride = 1;
  b.fixed = make_conv(in_c, out_c, kind_geom(KernelKind::conv3x3_fixed), 1, false, rng);
  b.fixed_bn = make_batchnorm(out_c);
  b.beta = Tensor::scalar(0.0, true);
  int taken = 0;
  for (KernelKind kind : kCandidateOrder) {
    if (kind == KernelKind::identity && (!allow_identity || in_c != out_c)) continue;
    if (max_candidates > 0 && taken >= max_candidates) break;
    b.candidates.push_back(make_candidate(kind, in_c, out_c, rng));
    ++taken;
  }
  return b;
}

}  // namespace

SubnetMask SubnetMask::from_string(const std::string& s) {
  SubnetMask m;
  m.bits.reserve(s.size());
  for (char ch : s) {
    if (ch != '0' && ch != '1') {
      throw std::invalid_argument("mask: invalid character '" + std::string(1, ch) + "'");
    }
    m.bits.push_back(ch == '1' ? 1 : 0);
  }
  return m;
}

int SubnetMask::popcount() const {
  int n = 0;
  for (std::uint8_t b : bits) n += b ? 1 : 0;
  return n;
}

std::string SubnetMask::to_string() const {
  std::string s;
  s.reserve(bits.size());
  for (std::uint8_t b : bits) s.push_back(b ? '1' : '0');
  return s;
}

SuperNet build_supernet(const NetConfig& cfg) {
  if (cfg.widths.empty()) throw std::invalid_argument("build_supernet: empty width list");
  for (int w : cfg.widths) {
    if (w < 1) throw std::invalid_argument("build_supernet: non-positive width");
  }
  if (cfg.classes < 2) throw std::invalid_argument("build_supernet: need at least 2 classes");
  if (cfg.in_channels < 1) throw std::invalid_argument("build_supernet: bad channel count");

  SuperNet net;
  net.config = cfg;
  Rng rng(cfg.init_seed ^ 0x5eed5eedULL);
  const bool residual = cfg.arch == ArchKind::resnet_small;
  const bool allow_identity = !residual;

  auto add_block = [&](int in_c, int out_c) {
    net.blocks.push_back(make_block(in_c, out_c, allow_identity, cfg.max_candidates, rng));
    Layer l;
    l.op = Layer::Op::block;
    l.index = static_cast<int>(net.blocks.size()) - 1;
    net.layers.push_back(l);
  };
  auto add_plain = [&](Layer::Op op, int index = 0) {
    Layer l;
    l.op = op;
    l.index = index;
    net.layers.push_back(l);
  };
  auto add_transition = [&](int in_c, int out_c) {
    Layer l;
    l.op = Layer::Op::transition;
    l.conv = make_conv(in_c, out_c, {1, 1, 1, 1, 0, 0}, 1, true, rng);
    net.layers.push_back(l);
    add_plain(Layer::Op::relu);
  };

  int width = cfg.widths[0];
  add_transition(cfg.in_channels, width);
  // downsample at most twice, right after the stem and after the first
  // block/unit, keeping >= 8x8 feature maps for 32x32 inputs
  add_plain(Layer::Op::pool2);

  if (residual) {
    for (std::size_t u = 0; u < cfg.widths.size(); ++u) {
      if (u > 0) {
        if (u == 1) add_plain(Layer::Op::pool2);
        add_transition(width, cfg.widths[u]);
        width = cfg.widths[u];
      }
      add_plain(Layer::Op::save, 0);
      add_block(width, width);
      add_plain(Layer::Op::relu);
      add_block(width, width);
      add_plain(Layer::Op::add_saved, 0);
      add_plain(Layer::Op::relu);
    }
  } else {
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      add_block(width, cfg.widths[i]);
      width = cfg.widths[i];
      add_plain(Layer::Op::relu);
      if (i == 0 && cfg.widths.size() > 1) add_plain(Layer::Op::pool2);
    }
  }

  add_plain(Layer::Op::global_pool);
  Layer head;
  head.op = Layer::Op::head;
  head.conv = make_conv(width, cfg.classes, {1, 1, 1, 1, 0, 0}, 1, true, rng);
  net.layers.push_back(head);

  net.branch_offset.clear();
  int off = 0;
  for (const BlockSpec& b : net.blocks) {
    net.branch_offset.push_back(off);
    off += static_cast<int>(b.candidates.size());
  }
  net.branch_offset.push_back(off);
  net.total_branches = off;
  return net;
}

void SuperNet::set_train(bool train) {
  for (BlockSpec& b : blocks) {
    b.fixed_bn.train = train;
    for (Candidate& c : b.candidates) {
      c.bn.train = train;
      if (c.bn2) c.bn2->train = train;
    }
  }
}

bool SuperNet::bn_stats_ready() const {
  for (const BlockSpec& b : blocks) {
    if (!b.fixed_bn.stats_ready) return false;
    for (const Candidate& c : b.candidates) {
      if (c.kind == KernelKind::identity) continue;
      if (!c.bn.stats_ready) return false;
      if (c.bn2 && !c.bn2->stats_ready) return false;
    }
  }
  return true;
}

void SuperNet::mark_bn_stats_ready() {
  for (BlockSpec& b : blocks) {
    b.fixed_bn.stats_ready = true;
    for (Candidate& c : b.candidates) {
      c.bn.stats_ready = true;
      if (c.bn2) c.bn2->stats_ready = true;
    }
  }
}

std::vector<std::pair<std::string, TensorPtr>> SuperNet::weight_params() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockSpec& b = blocks[i];
    const std::string p = "block" + std::to_string(i);
    out.push_back({p + "/fixed/w", b.fixed.weight});
    out.push_back({p + "/fixed/bn/g", b.fixed_bn.gamma});
    out.push_back({p + "/fixed/bn/b", b.fixed_bn.beta});
    for (std::size_t j = 0; j < b.candidates.size(); ++j) {
      const Candidate& c = b.candidates[j];
      if (c.kind == KernelKind::identity) continue;
      const std::string q = p + "/c" + std::to_string(j);
      out.push_back({q + "/w", c.conv.weight});
      out.push_back({q + "/bn/g", c.bn.gamma});
      out.push_back({q + "/bn/b", c.bn.beta});
      if (c.conv2) {
        out.push_back({q + "/w2", c.conv2->weight});
        out.push_back({q + "/bn2/g", c.bn2->gamma});
        out.push_back({q + "/bn2/b", c.bn2->beta});
      }
    }
  }
  int t = 0;
  for (const Layer& l : layers) {
    if (l.op == Layer::Op::transition) {
      const std::string p = "trans" + std::to_string(t++);
      out.push_back({p + "/w", l.conv.weight});
      out.push_back({p + "/b", l.conv.bias});
    } else if (l.op == Layer::Op::head) {
      out.push_back({"head/w", l.conv.weight});
      out.push_back({"head/b", l.conv.bias});
    }
  }
  return out;
}

std::vector<std::pair<std::string, TensorPtr>> SuperNet::arch_params() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockSpec& b = blocks[i];
    const std::string p = "block" + std::to_string(i);
    for (std::size_t j = 0; j < b.candidates.size(); ++j) {
      out.push_back({p + "/c" + std::to_string(j) + "/alpha", b.candidates[j].alpha});
    }
    out.push_back({p + "/beta", b.beta});
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> SuperNet::bn_buffers() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    BlockSpec& b = blocks[i];
    const std::string p = "block" + std::to_string(i);
    out.push_back({p + "/fixed/bn/rm", &b.fixed_bn.running_mean});
    out.push_back({p + "/fixed/bn/rv", &b.fixed_bn.running_var});
    for (std::size_t j = 0; j < b.candidates.size(); ++j) {
      Candidate& c = b.candidates[j];
      if (c.kind == KernelKind::identity) continue;
      const std::string q = p + "/c" + std::to_string(j);
      out.push_back({q + "/bn/rm", &c.bn.running_mean});
      out.push_back({q + "/bn/rv", &c.bn.running_var});
      if (c.bn2) {
        out.push_back({q + "/bn2/rm", &c.bn2->running_mean});
        out.push_back({q + "/bn2/rv", &c.bn2->running_var});
      }
    }
  }
  return out;
}

std::vector<double> SuperNet::alpha_values() const {
  std::vector<double> out;
  out.reserve(total_branches);
  for (const BlockSpec& b : blocks) {
    for (const Candidate& c : b.candidates) out.push_back(c.alpha->data[0]);
  }
  return out;
}

std::vector<double> SuperNet::beta_values() const {
  std::vector<double> out;
  out.reserve(blocks.size());
  for (const BlockSpec& b : blocks) out.push_back(b.beta->data[0]);
  return out;
}

namespace {

TensorPtr candidate_forward(Candidate& c, const TensorPtr& x, Tape* tape) {
  switch (c.kind) {
    case KernelKind::identity:
      return x;
    case KernelKind::seq1x1_3x3: {
      auto h = batchnorm(conv2d(x, c.conv, tape), c.bn, tape);
      return batchnorm(conv2d(h, *c.conv2, tape), *c.bn2, tape);
    }
    case KernelKind::avg1x1_pool3: {
      auto h = batchnorm(conv2d(x, c.conv, tape), c.bn, tape);
      return avgpool2d(h, 3, 1, 0, tape);
    }
    default:
      return batchnorm(conv2d(x, c.conv, tape), c.bn, tape);
  }
}

}  // namespace

TensorPtr block_forward(BlockSpec& block, const TensorPtr& x,
                        std::span<const std::uint8_t> mask_bits, Tape* tape) {
  if (mask_bits.size() != block.candidates.size()) {
    throw std::invalid_argument("block_forward: mask length " +
                                std::to_string(mask_bits.size()) + " != candidate count " +
                                std::to_string(block.candidates.size()));
  }
  TensorPtr fixed = batchnorm(conv2d(x, block.fixed, tape), block.fixed_bn, tape);
  TensorPtr acc;
  for (std::size_t j = 0; j < block.candidates.size(); ++j) {
    if (!mask_bits[j]) continue;
    Candidate& c = block.candidates[j];
    TensorPtr term = scale(candidate_forward(c, x, tape), sigmoid(c.alpha, tape), tape);
    acc = acc ? add(acc, term, tape) : term;
  }
  if (!acc) return fixed;
  return add(fixed, scale(acc, sigmoid(block.beta, tape), tape), tape);
}

TensorPtr supernet_forward(SuperNet& net, const TensorPtr& x, const SubnetMask& mask,
                           Tape* tape) {
  if (mask.size() != net.total_branches) {
    throw std::invalid_argument("supernet_forward: mask length " + std::to_string(mask.size()) +
                                " != total branches " + std::to_string(net.total_branches));
  }
  TensorPtr cur = x;
  std::map<int, TensorPtr> saved;
  for (Layer& layer : net.layers) {
    switch (layer.op) {
      case Layer::Op::block: {
        BlockSpec& b = net.blocks[layer.index];
        const int off = net.branch_offset[layer.index];
        cur = block_forward(
            b, cur, std::span<const std::uint8_t>(mask.bits.data() + off, b.candidates.size()),
            tape);
        break;
      }
      case Layer::Op::relu: cur = relu(cur, tape); break;
      case Layer::Op::pool2: cur = avgpool2d(cur, 2, 2, 0, tape); break;
      case Layer::Op::transition:
      case Layer::Op::head: cur = conv2d(cur, layer.conv, tape); break;
      case Layer::Op::global_pool: cur = global_avgpool(cur, tape); break;
      case Layer::Op::save: saved[layer.index] = cur; break;
      case Layer::Op::add_saved: cur = add(cur, saved.at(layer.index), tape); break;
    }
  }
  return cur;
}

std::vector<std::vector<std::uint8_t>> split_mask(const SuperNet& net, const SubnetMask& mask) {
  if (mask.size() != net.total_branches) {
    throw std::invalid_argument("split_mask: mask length " + std::to_string(mask.size()) +
                                " != total branches " + std::to_string(net.total_branches));
  }
  std::vector<std::vector<std::uint8_t>> slices;
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const int lo = net.branch_offset[i], hi = net.branch_offset[i + 1];
    slices.emplace_back(mask.bits.begin() + lo, mask.bits.begin() + hi);
  }
  return slices;
}

SubnetMask join_mask(const SuperNet& net, const std::vector<std::vector<std::uint8_t>>& slices) {
  if (slices.size() != net.blocks.size()) {
    throw std::invalid_argument("join_mask: slice count mismatch");
  }
  SubnetMask mask;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const std::size_t want = net.blocks[i].candidates.size();
    if (slices[i].size() != want) {
      throw std::invalid_argument("join_mask: slice " + std::to_string(i) + " has " +
                                  std::to_string(slices[i].size()) + " bits, expected " +
                                  std::to_string(want));
    }
    mask.bits.insert(mask.bits.end(), slices[i].begin(), slices[i].end());
  }
  return mask;
}

TensorPtr PlainNet::forward(const TensorPtr& x) const {
  TensorPtr cur = x;
  std::map<int, TensorPtr> saved;
  for (const PlainLayer& layer : layers) {
    switch (layer.op) {
      case PlainLayer::Op::conv: cur = conv2d(cur, layer.conv, nullptr); break;
      case PlainLayer::Op::relu: cur = relu(cur, nullptr); break;
      case PlainLayer::Op::pool2: cur = avgpool2d(cur, 2, 2, 0, nullptr); break;
      case PlainLayer::Op::global_pool: cur = global_avgpool(cur, nullptr); break;
      case PlainLayer::Op::save: saved[layer.index] = cur; break;
      case PlainLayer::Op::add_saved: cur = add(cur, saved.at(layer.index), nullptr); break;
    }
  }
  return cur;
}

long long PlainNet::param_count() const {
  long long n = 0;
  for (const PlainLayer& layer : layers) {
    if (layer.op != PlainLayer::Op::conv) continue;
    n += layer.conv.weight->numel();
    if (layer.conv.bias) n += layer.conv.bias->numel();
  }
  return n;
}

}  // namespace irep
