#include "support.hpp"

#include <regex>
#include <stdexcept>

namespace lutnet::testing {

TopologySpec linear_spec(int inputs, int in_bits, const std::vector<LinearLayerShape>& layers, std::uint64_t seed,
                         double in_max) {
  TopologySpec spec;
  spec.input_features = inputs;
  spec.input_bit_width = in_bits;
  spec.seed = seed;
  int bits = in_bits;
  double max = in_max;
  for (const auto& s : layers) {
    LayerSpec l;
    l.kind = LayerKind::SparseLinear;
    l.neurons = s.neurons;
    l.fan_in = s.fan_in;
    l.in_bit_width = bits;
    l.max_val_in = max;
    l.out_bit_width = s.out_bits;
    l.max_val_out = s.max_val;
    spec.layers.push_back(l);
    bits = s.out_bits;
    max = s.max_val;
  }
  return spec;
}

TopologySpec conv_spec(int h, int w, int c, int k, int stride, int maps, int xk, int xs, bool first,
                       std::uint64_t seed) {
  TopologySpec spec;
  spec.input_features = h * w * c;
  spec.input_bit_width = 2;
  spec.seed = seed;
  spec.input_shape = SpatialShape{h, w, c};
  LayerSpec l;
  l.kind = LayerKind::SparseConv;
  l.neurons = maps;
  l.in_bit_width = 2;
  l.max_val_in = 1.0;
  l.out_bit_width = 2;
  l.max_val_out = 1.5;
  l.kernel_size = k;
  l.stride = stride;
  l.kernel_fan_in = xk;
  l.pointwise_fan_in = xs;
  l.intermediate_bit_width = 2;
  l.max_val_intermediate = 1.0;
  l.first_layer = first;
  spec.layers.push_back(l);
  return spec;
}

namespace {

void randomize(BatchNorm& bn, const QuantizerParams& out, Rng& rng) {
  for (int i = 0; i < bn.size(); ++i) {
    bn.gamma[i] = rng.uniform(0.5, 2.0) * (rng.uniform() < 0.2 ? -1.0 : 1.0);
    bn.beta[i] = out.is_binary() ? rng.uniform(-0.5, 0.5) : rng.uniform(0.0, out.max_val);
    bn.running_mean[i] = rng.uniform(-0.5, 0.5);
    bn.running_var[i] = rng.uniform(0.5, 2.0);
  }
}

}  // namespace

void randomize_batchnorm(Model& model, Rng& rng) {
  for (Layer& layer : model.layers) {
    if (auto* l = std::get_if<SparseLinearLayer>(&layer)) randomize(l->batchnorm, l->output_quantizer, rng);
    if (auto* d = std::get_if<DenseQuantLinearLayer>(&layer)) randomize(d->batchnorm, d->output_quantizer, rng);
    if (auto* c = std::get_if<SparseConvLayer>(&layer)) {
      randomize(c->depthwise_bn, c->intermediate_quantizer, rng);
      randomize(c->pointwise_bn, c->output_quantizer, rng);
    }
  }
}

Model random_sparse_model(Rng& rng) {
  const int inputs = 3 + static_cast<int>(rng.below(8));
  const int in_bits = 1 + static_cast<int>(rng.below(3));
  const int depth = 1 + static_cast<int>(rng.below(3));
  std::vector<LinearLayerShape> shapes;
  int width = inputs;
  for (int d = 0; d < depth; ++d) {
    LinearLayerShape s;
    s.neurons = 2 + static_cast<int>(rng.below(5));
    s.fan_in = std::min(width, 2 + static_cast<int>(rng.below(3)));
    s.out_bits = 1 + static_cast<int>(rng.below(3));
    s.max_val = rng.uniform(0.5, 3.0);
    shapes.push_back(s);
    width = s.neurons;
  }
  Model m = build_model(linear_spec(inputs, in_bits, shapes, rng.next_u64(), rng.uniform(0.5, 3.0)));
  randomize_batchnorm(m, rng);
  return m;
}

std::vector<std::uint32_t> random_codes(Rng& rng, int count, int bits) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(count));
  for (auto& c : out) c = static_cast<std::uint32_t>(rng.below(std::uint64_t{1} << bits));
  return out;
}

Model ten_parameter_model() {
  Model m = build_model(linear_spec(4, 3, {{2, 3, 3, 4.0}}, 17, 1.0));
  auto& l = std::get<SparseLinearLayer>(m.layers[0]);
  l.batchnorm.gamma << 0.7, 1.3;
  l.batchnorm.beta << 1.9, 2.2;
  return m;
}

double& ten_parameter(Model& m, int k) {
  auto& l = std::get<SparseLinearLayer>(m.layers[0]);
  if (k < 6) {
    const int n = k / 3;
    return l.weights(n, l.mask.rows[static_cast<std::size_t>(n)][static_cast<std::size_t>(k % 3)]);
  }
  return k < 8 ? l.batchnorm.gamma[k - 6] : l.batchnorm.beta[k - 8];
}

Model three_neuron_model() {
  Model m = build_model(linear_spec(5, 1, {{3, 3, 1, 1.0}}));
  auto& l = std::get<SparseLinearLayer>(m.layers[0]);
  l.mask.rows = {{0, 2, 4}, {1, 2, 3}, {0, 1, 2}};
  l.weights.setZero();
  l.weights(0, 0) = l.weights(0, 2) = l.weights(0, 4) = -1.0;
  l.weights(1, 3) = -1.0;
  l.weights(2, 2) = -1.0;
  validate(m);
  return m;
}

std::vector<bool> to_bools(const BitVector& v) {
  std::vector<bool> out(static_cast<std::size_t>(v.width()));
  for (int i = 0; i < v.width(); ++i) out[static_cast<std::size_t>(i)] = v.get(i);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

int width_of(const std::string& hi, const std::string& lo) { return std::stoi(hi) - std::stoi(lo) + 1; }

}  // namespace

VerilogEvaluator::Module VerilogEvaluator::parse(const std::string& text) {
  static const std::regex header(R"(module\s+(\w+)\s*\(([^;]*?)\)\s*;)");
  static const std::regex port(R"((input|output)\s*(?:\[(\d+):(\d+)\])?\s*(\w+))");
  static const std::regex reg(R"(\breg\s*\[(\d+):(\d+)\]\s*(\w+)\s*;)");
  static const std::regex wire_plain(R"(\bwire\s*\[(\d+):(\d+)\]\s*(\w+)\s*;)");
  static const std::regex wire_cat(R"(\bwire\s*\[(\d+):(\d+)\]\s*(\w+)\s*=\s*\{([^}]*)\}\s*;)");
  static const std::regex inst(R"((\w+)\s+(\w+)\s*\(\s*\.M0\(([^()]*)\)\s*,\s*\.M1\(([^()]*)\)\s*\)\s*;)");
  static const std::regex nonblocking(R"((\w+)\s*<=\s*([^;]+);)");
  static const std::regex assign(R"(\bassign\s+(\w+)\s*=\s*([^;]+);)");
  static const std::regex row(R"((\d+)'d(\d+)\s*:\s*M1\s*=\s*(\d+)'b([01]+)\s*;)");

  auto slice_of = [](std::string s) {
    static const std::regex sl(R"(^\s*(\w+)\s*(?:\[(\d+)(?::(\d+))?\])?\s*$)");
    std::smatch m;
    if (!std::regex_match(s, m, sl)) throw std::runtime_error("verilog: bad operand '" + s + "'");
    Slice out;
    out.signal = m[1];
    if (m[2].matched) {
      out.hi = std::stoi(m[2]);
      out.lo = m[3].matched ? std::stoi(m[3]) : out.hi;
    }
    return out;
  };
  auto concat_of = [&](const std::string& body) {
    std::vector<Slice> parts;
    std::size_t start = 0;
    while (start <= body.size()) {
      const auto comma = body.find(',', start);
      parts.push_back(slice_of(body.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return parts;
  };

  Module m;
  std::smatch h;
  if (!std::regex_search(text, h, header)) throw std::runtime_error("verilog: no module header");
  m.name = h[1];
  const std::string ports = h[2];
  for (auto it = std::sregex_iterator(ports.begin(), ports.end(), port); it != std::sregex_iterator(); ++it) {
    const auto& p = *it;
    const int w = p[2].matched ? width_of(p[2], p[3]) : 1;
    m.widths[p[4]] = w;
    if (p[4] == "clk") m.clocked = true;
    if (p[4] == "M0") m.in_width = w;
    if (p[4] == "M1") m.out_width = w;
  }
  const std::string body = h.suffix();

  for (auto it = std::sregex_iterator(body.begin(), body.end(), row); it != std::sregex_iterator(); ++it) {
    const auto& r = *it;
    m.is_table = true;
    if (std::stoi(r[1]) != m.in_width || std::stoi(r[3]) != m.out_width)
      throw std::runtime_error("verilog: case row width differs from the ports in " + m.name);
    const auto idx = static_cast<std::size_t>(std::stoull(r[2]));
    if (m.rows.size() <= idx) m.rows.resize(idx + 1);
    m.rows[idx] = r[4];
  }
  if (m.is_table) {
    if (m.rows.size() != (std::size_t{1} << m.in_width)) throw std::runtime_error("verilog: incomplete case table");
    for (const auto& r : m.rows)
      if (r.size() != static_cast<std::size_t>(m.out_width)) throw std::runtime_error("verilog: bad row width");
    return m;
  }
  for (auto it = std::sregex_iterator(body.begin(), body.end(), reg); it != std::sregex_iterator(); ++it)
    m.widths[(*it)[3]] = width_of((*it)[1], (*it)[2]);
  for (auto it = std::sregex_iterator(body.begin(), body.end(), wire_plain); it != std::sregex_iterator(); ++it)
    m.widths[(*it)[3]] = width_of((*it)[1], (*it)[2]);
  for (auto it = std::sregex_iterator(body.begin(), body.end(), wire_cat); it != std::sregex_iterator(); ++it) {
    m.widths[(*it)[3]] = width_of((*it)[1], (*it)[2]);
    m.wires[(*it)[3]] = concat_of((*it)[4]);
  }
  for (auto it = std::sregex_iterator(body.begin(), body.end(), inst); it != std::sregex_iterator(); ++it) {
    const auto& i = *it;
    if (i[1] == "module") continue;
    m.instances.push_back({i[1], concat_of(i[3]), slice_of(i[4])});
  }
  for (auto it = std::sregex_iterator(body.begin(), body.end(), nonblocking); it != std::sregex_iterator(); ++it)
    m.registers.emplace_back((*it)[1], slice_of((*it)[2]));
  for (auto it = std::sregex_iterator(body.begin(), body.end(), assign); it != std::sregex_iterator(); ++it)
    m.assigns.emplace_back((*it)[1], slice_of((*it)[2]));
  return m;
}

VerilogEvaluator::VerilogEvaluator(const std::vector<VerilogFile>& files) {
  for (const auto& f : files) {
    if (f.name.size() < 2 || f.name.substr(f.name.size() - 2) != ".v") continue;
    Module m = parse(f.text);
    if (m.name + ".v" != f.name) throw std::runtime_error("verilog: file " + f.name + " holds module " + m.name);
    modules_[m.name] = std::move(m);
  }
  const auto it = modules_.find("LogicNetModule");
  if (it == modules_.end()) throw std::runtime_error("verilog: no top module");
  top_ = it->second;
  for (const auto& [name, w] : top_.widths) state_[name] = std::vector<bool>(static_cast<std::size_t>(w), false);
}

std::vector<bool> VerilogEvaluator::read(const Signals& s, const Slice& slice) {
  const auto it = s.find(slice.signal);
  if (it == s.end()) throw std::runtime_error("verilog: undeclared signal " + slice.signal);
  if (slice.hi < 0) return it->second;
  if (slice.hi >= static_cast<int>(it->second.size()) || slice.lo < 0 || slice.lo > slice.hi)
    throw std::runtime_error("verilog: slice out of range on " + slice.signal);
  return {it->second.begin() + slice.lo, it->second.begin() + slice.hi + 1};
}

std::vector<bool> VerilogEvaluator::concat(const Signals& s, const std::vector<Slice>& parts) {
  // {a, b, c}: c is least significant.
  std::vector<bool> out;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    const auto v = read(s, *it);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

void VerilogEvaluator::settle(const Module& m, Signals& s) {
  auto write = [&](const Slice& dst, const std::vector<bool>& v) {
    auto& target = s.at(dst.signal);
    const int lo = dst.hi < 0 ? 0 : dst.lo;
    const int w = dst.hi < 0 ? static_cast<int>(target.size()) : dst.hi - dst.lo + 1;
    if (static_cast<int>(v.size()) != w) throw std::runtime_error("verilog: width mismatch driving " + dst.signal);
    bool changed = false;
    for (int i = 0; i < w; ++i) {
      auto ref = target[static_cast<std::size_t>(lo + i)];
      if (ref != v[static_cast<std::size_t>(i)]) {
        ref = v[static_cast<std::size_t>(i)];
        changed = true;
      }
    }
    return changed;
  };
  // Iterate to a fixed point; the designs are acyclic so this terminates.
  for (std::size_t pass = 0; pass <= m.instances.size() + m.wires.size() + 2; ++pass) {
    bool changed = false;
    for (const auto& [name, parts] : m.wires) changed |= write({name, -1, -1}, concat(s, parts));
    for (const auto& i : m.instances) changed |= write(i.out, eval_module(modules_.at(i.module), concat(s, i.in)));
    for (const auto& [lhs, rhs] : m.assigns) changed |= write({lhs, -1, -1}, read(s, rhs));
    if (!changed) return;
  }
  throw std::runtime_error("verilog: combinational logic did not settle in " + m.name);
}

std::vector<bool> VerilogEvaluator::eval_module(const Module& m, const std::vector<bool>& in) {
  if (static_cast<int>(in.size()) != m.in_width) throw std::runtime_error("verilog: port width mismatch on " + m.name);
  if (m.is_table) {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i]) idx |= std::size_t{1} << i;
    const std::string& bits = m.rows[idx];
    std::vector<bool> out(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) out[i] = bits[bits.size() - 1 - i] == '1';
    return out;
  }
  Signals s;
  for (const auto& [name, w] : m.widths) s[name] = std::vector<bool>(static_cast<std::size_t>(w), false);
  s["M0"] = in;
  settle(m, s);
  return s.at("M1");
}

std::vector<bool> VerilogEvaluator::run(const std::vector<bool>& input, int cycles) {
  if (static_cast<int>(input.size()) != top_.in_width) throw std::runtime_error("verilog: input width mismatch");
  state_["M0"] = input;
  for (int c = 0; c < cycles; ++c) {
    settle(top_, state_);
    std::vector<std::pair<std::string, std::vector<bool>>> next;
    for (const auto& [lhs, rhs] : top_.registers) next.emplace_back(lhs, read(state_, rhs));
    for (auto& [lhs, v] : next) state_.at(lhs) = std::move(v);
  }
  settle(top_, state_);
  return state_.at("M1");
}

}  // namespace lutnet::testing
