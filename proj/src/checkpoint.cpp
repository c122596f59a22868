#include "irep/checkpoint.hpp"

#include <map>

#include "irep/errors.hpp"
#include "irep/serialize.hpp"

namespace irep {

namespace {

std::vector<double> split_u64(std::uint64_t v) {
  return {static_cast<double>(v >> 32), static_cast<double>(v & 0xFFFFFFFFULL)};
}

std::uint64_t join_u64(const std::vector<double>& v) {
  return (static_cast<std::uint64_t>(v.at(0)) << 32) | static_cast<std::uint64_t>(v.at(1));
}

Record tensor_record(const std::string& name, const TensorPtr& t) {
  Record r;
  r.name = name;
  const Shape4& s = t->shape;
  r.dims = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
            static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  r.values = t->data;
  return r;
}

Record vector_record(const std::string& name, const std::vector<double>& v) {
  Record r;
  r.name = name;
  r.dims = {static_cast<std::uint32_t>(v.size())};
  r.values = v;
  return r;
}

class RecordMap {
 public:
  explicit RecordMap(std::vector<Record> records) {
    for (Record& r : records) map_.emplace(r.name, std::move(r));
  }
  const Record& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw DataError("checkpoint: missing record " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return map_.count(name) != 0; }

 private:
  std::map<std::string, Record> map_;
};

void load_tensor(const RecordMap& records, const std::string& name, const TensorPtr& t) {
  const Record& r = records.at(name);
  if (r.numel() != t->numel()) {
    throw DataError("checkpoint: record " + name + " has " + std::to_string(r.numel()) +
                    " values, expected " + std::to_string(t->numel()));
  }
  t->data = r.values;
}

}  // namespace

void save_checkpoint(const std::string& path, const SearchState& st,
                     const std::string& config_text) {
  std::vector<Record> records;
  std::vector<double> config_bytes(config_text.size());
  for (std::size_t i = 0; i < config_text.size(); ++i) {
    config_bytes[i] = static_cast<unsigned char>(config_text[i]);
  }
  records.push_back(vector_record("meta/config_text", config_bytes));
  records.push_back(vector_record(
      "meta/counters", {static_cast<double>(st.round), static_cast<double>(st.epoch),
                        static_cast<double>(st.budget), st.net.bn_stats_ready() ? 1.0 : 0.0}));
  {
    std::vector<double> rng = split_u64(st.rng.key());
    const std::vector<double> ctr = split_u64(st.rng.counter());
    rng.insert(rng.end(), ctr.begin(), ctr.end());
    records.push_back(vector_record("rng/state", rng));
  }
  records.push_back(vector_record("opt/adam/t", {static_cast<double>(st.adam.t())}));

  for (const auto& [name, t] : st.net.weight_params()) {
    records.push_back(tensor_record("param/" + name, t));
    if (st.sgd.has_state(t)) {
      records.push_back(vector_record("opt/sgd/v/" + name, st.sgd.state(t)));
    }
  }
  for (const auto& [name, t] : st.net.arch_params()) {
    records.push_back(tensor_record("param/" + name, t));
    if (st.adam.has_state(t)) {
      records.push_back(vector_record("opt/adam/m/" + name, st.adam.state_m(t)));
      records.push_back(vector_record("opt/adam/v/" + name, st.adam.state_v(t)));
    }
  }
  for (const auto& [name, buf] : const_cast<SuperNet&>(st.net).bn_buffers()) {
    records.push_back(vector_record("buffer/" + name, *buf));
  }
  for (std::size_t i = 0; i < st.population.size(); ++i) {
    const Individual& ind = st.population[i];
    std::vector<double> bits(ind.mask.bits.begin(), ind.mask.bits.end());
    records.push_back(vector_record("pop/" + std::to_string(i) + "/mask", bits));
    records.push_back(vector_record(
        "pop/" + std::to_string(i) + "/meta",
        {ind.fitness, static_cast<double>(static_cast<int>(ind.origin))}));
  }
  write_record_file(path, records);
}

std::string checkpoint_config_text(const std::string& path) {
  RecordMap records(read_record_file(path));
  const Record& r = records.at("meta/config_text");
  std::string text;
  text.reserve(r.values.size());
  for (double v : r.values) text.push_back(static_cast<char>(static_cast<int>(v)));
  return text;
}

void load_checkpoint(const std::string& path, SearchState& st) {
  RecordMap records(read_record_file(path));
  const Record& counters = records.at("meta/counters");
  st.round = static_cast<int>(counters.values.at(0));
  st.epoch = static_cast<int>(counters.values.at(1));
  const int budget = static_cast<int>(counters.values.at(2));
  if (budget != st.budget) {
    throw DataError("checkpoint: budget " + std::to_string(budget) +
                    " does not match config budget " + std::to_string(st.budget));
  }
  {
    const Record& r = records.at("rng/state");
    st.rng = Rng(join_u64({r.values.at(0), r.values.at(1)}),
                 join_u64({r.values.at(2), r.values.at(3)}));
  }
  st.adam.set_t(static_cast<long>(records.at("opt/adam/t").values.at(0)));

  for (const auto& [name, t] : st.net.weight_params()) {
    load_tensor(records, "param/" + name, t);
    if (records.has("opt/sgd/v/" + name)) {
      st.sgd.set_state(t, records.at("opt/sgd/v/" + name).values);
    }
  }
  for (const auto& [name, t] : st.net.arch_params()) {
    load_tensor(records, "param/" + name, t);
    if (records.has("opt/adam/m/" + name)) {
      st.adam.set_state(t, records.at("opt/adam/m/" + name).values,
                        records.at("opt/adam/v/" + name).values);
    }
  }
  for (auto& [name, buf] : st.net.bn_buffers()) {
    const Record& r = records.at("buffer/" + name);
    if (r.values.size() != buf->size()) {
      throw DataError("checkpoint: buffer " + name + " size mismatch");
    }
    *buf = r.values;
  }
  if (counters.values.at(3) != 0.0) st.net.mark_bn_stats_ready();

  st.population.clear();
  for (std::size_t i = 0;; ++i) {
    const std::string base = "pop/" + std::to_string(i);
    if (!records.has(base + "/mask")) break;
    Individual ind;
    const Record& mask = records.at(base + "/mask");
    ind.mask.bits.assign(mask.values.size(), 0);
    for (std::size_t k = 0; k < mask.values.size(); ++k) {
      ind.mask.bits[k] = mask.values[k] != 0.0 ? 1 : 0;
    }
    const Record& meta = records.at(base + "/meta");
    ind.fitness = meta.values.at(0);
    ind.origin = static_cast<Origin>(static_cast<int>(meta.values.at(1)));
    st.population.push_back(std::move(ind));
  }
  if (st.population.empty()) throw DataError("checkpoint: empty population");
  if (static_cast<int>(st.population[0].mask.bits.size()) != st.net.total_branches) {
    throw DataError("checkpoint: mask length does not match network");
  }
}

namespace {

constexpr double kOpConv = 0.0, kOpRelu = 1.0, kOpPool2 = 2.0, kOpGlobalPool = 3.0,
                 kOpSave = 4.0, kOpAddSaved = 5.0;

}  // namespace

void save_fused_model(const std::string& path, const PlainNet& net, const SubnetMask& mask,
                      bool as_f32) {
  std::vector<Record> records;
  records.push_back(vector_record(
      "net/meta", {static_cast<double>(net.in_channels), static_cast<double>(net.classes)}));
  std::vector<double> ops;
  int conv_idx = 0;
  for (const PlainLayer& l : net.layers) {
    switch (l.op) {
      case PlainLayer::Op::conv: {
        ops.insert(ops.end(), {kOpConv, static_cast<double>(l.conv.stride.first),
                               static_cast<double>(l.conv.padding.first)});
        const std::string base = "conv/" + std::to_string(conv_idx++);
        Record w = tensor_record(base + "/w", l.conv.weight);
        w.as_f32 = as_f32;
        records.push_back(std::move(w));
        Record b = vector_record(
            base + "/b", l.conv.bias ? l.conv.bias->data : std::vector<double>());
        b.as_f32 = as_f32;
        records.push_back(std::move(b));
        break;
      }
      case PlainLayer::Op::relu: ops.insert(ops.end(), {kOpRelu, 0, 0}); break;
      case PlainLayer::Op::pool2: ops.insert(ops.end(), {kOpPool2, 0, 0}); break;
      case PlainLayer::Op::global_pool: ops.insert(ops.end(), {kOpGlobalPool, 0, 0}); break;
      case PlainLayer::Op::save:
        ops.insert(ops.end(), {kOpSave, static_cast<double>(l.index), 0});
        break;
      case PlainLayer::Op::add_saved:
        ops.insert(ops.end(), {kOpAddSaved, static_cast<double>(l.index), 0});
        break;
    }
  }
  records.push_back(vector_record("net/ops", ops));
  std::vector<double> bits(mask.bits.begin(), mask.bits.end());
  records.push_back(vector_record("mask/bits", bits));
  write_record_file(path, records);
}

FusedModel load_fused_model(const std::string& path) {
  RecordMap records(read_record_file(path));
  FusedModel model;
  const Record& meta = records.at("net/meta");
  model.net.in_channels = static_cast<int>(meta.values.at(0));
  model.net.classes = static_cast<int>(meta.values.at(1));
  const Record& ops = records.at("net/ops");
  if (ops.values.size() % 3 != 0) throw DataError("model: malformed op list");
  int conv_idx = 0;
  for (std::size_t i = 0; i < ops.values.size(); i += 3) {
    PlainLayer l;
    const double code = ops.values[i];
    if (code == kOpConv) {
      l.op = PlainLayer::Op::conv;
      const std::string base = "conv/" + std::to_string(conv_idx++);
      const Record& w = records.at(base + "/w");
      if (w.dims.size() != 4) throw DataError("model: conv weight must be 4-d");
      l.conv.weight = Tensor::from({static_cast<int>(w.dims[0]), static_cast<int>(w.dims[1]),
                                    static_cast<int>(w.dims[2]), static_cast<int>(w.dims[3])},
                                   w.values);
      const Record& b = records.at(base + "/b");
      if (!b.values.empty()) {
        l.conv.bias = Tensor::from({1, static_cast<int>(b.values.size()), 1, 1}, b.values);
      }
      const int stride = static_cast<int>(ops.values[i + 1]);
      const int pad = static_cast<int>(ops.values[i + 2]);
      l.conv.stride = {stride, stride};
      l.conv.padding = {pad, pad};
    } else if (code == kOpRelu) {
      l.op = PlainLayer::Op::relu;
    } else if (code == kOpPool2) {
      l.op = PlainLayer::Op::pool2;
    } else if (code == kOpGlobalPool) {
      l.op = PlainLayer::Op::global_pool;
    } else if (code == kOpSave) {
      l.op = PlainLayer::Op::save;
      l.index = static_cast<int>(ops.values[i + 1]);
    } else if (code == kOpAddSaved) {
      l.op = PlainLayer::Op::add_saved;
      l.index = static_cast<int>(ops.values[i + 1]);
    } else {
      throw DataError("model: unknown op code");
    }
    model.net.layers.push_back(std::move(l));
  }
  const Record& mask = records.at("mask/bits");
  model.mask.bits.assign(mask.values.size(), 0);
  for (std::size_t k = 0; k < mask.values.size(); ++k) {
    model.mask.bits[k] = mask.values[k] != 0.0 ? 1 : 0;
  }
  return model;
}

}  // namespace irep
