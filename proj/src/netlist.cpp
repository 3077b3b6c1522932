#include "lutnet/netlist.hpp"

namespace lutnet {

const char* to_string(NetlistStyle style) {
  return style == NetlistStyle::Pipelined ? "pipelined" : "comb";
}

NetlistStyle netlist_style_from_string(const std::string& name) {
  if (name == "comb" || name == "combinational") return NetlistStyle::Combinational;
  if (name == "pipelined") return NetlistStyle::Pipelined;
  throw Error(ErrorKind::InvalidSpec, "unknown netlist style '" + name + "' (expected comb or pipelined)");
}

std::string BitVector::to_string() const {
  std::string s(static_cast<std::size_t>(width_), '0');
  for (int i = 0; i < width_; ++i)
    if (get(i)) s[static_cast<std::size_t>(width_ - 1 - i)] = '1';
  return s;
}

BitVector pack_codes(std::span<const std::uint32_t> codes, int bits) {
  BitVector v(static_cast<int>(codes.size()) * bits);
  for (std::size_t f = 0; f < codes.size(); ++f)
    for (int b = 0; b < bits; ++b) v.set(static_cast<int>(f) * bits + b, (codes[f] >> b) & 1u);
  return v;
}

std::vector<std::uint32_t> unpack_codes(const BitVector& v, int bits) {
  std::vector<std::uint32_t> codes(static_cast<std::size_t>(v.width() / bits), 0);
  for (std::size_t f = 0; f < codes.size(); ++f)
    for (int b = 0; b < bits; ++b)
      if (v.get(static_cast<int>(f) * bits + b)) codes[f] |= std::uint32_t{1} << b;
  return codes;
}

NetlistIR build_netlist(const Model& model, const ModelTables& tables, NetlistStyle style) {
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (!std::holds_alternative<SparseLinearLayer>(model.layers[i]))
      throw Error(ErrorKind::UnsupportedLayer, "layer " + std::to_string(i) + " (" +
                                                   to_string(kind_of(model.layers[i])) +
                                                   ") has no Verilog generator; only sparse_linear layers do");
  if (tables.layers.size() != model.layers.size())
    throw Error(ErrorKind::MissingTable, "build_netlist: table set does not cover the model");
  const auto geo = model.geometry();
  NetlistIR ir;
  ir.style = style;
  ir.input_code_bits = model.input_quantizer().bit_width;
  ir.output_code_bits = model.output_quantizer().bit_width;
  ir.input_width = model.topology.input_features * ir.input_code_bits;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& layer = std::get<SparseLinearLayer>(model.layers[i]);
    if (!tables.layers[i] || tables.layers[i]->neurons.size() != static_cast<std::size_t>(layer.neurons()))
      throw Error(ErrorKind::MissingTable, "layer " + std::to_string(i) + " has no truth tables");
    const int bi = layer.input_quantizer.bit_width;
    const int bo = layer.output_quantizer.bit_width;
    NetlistLayer nl;
    nl.sources = geo[i].sources;
    nl.input_width = geo[i].input_width * bi;
    nl.output_width = layer.neurons() * bo;
    for (int n = 0; n < layer.neurons(); ++n) {
      LutNode node;
      node.field_bits = bi;
      for (int f : layer.mask.rows[static_cast<std::size_t>(n)])
        for (int b = bi - 1; b >= 0; --b) node.input_bits.push_back(f * bi + b);
      node.out_lo = n * bo;
      node.out_hi = n * bo + bo - 1;
      node.table = (*tables.layers[i]).neurons[static_cast<std::size_t>(n)];
      if (node.table.input_bits() != static_cast<int>(node.input_bits.size()) || node.table.out_bits != bo)
        throw Error(ErrorKind::InvariantViolation,
                    "layer " + std::to_string(i) + " neuron " + std::to_string(n) + ": table shape mismatch");
      nl.nodes.push_back(std::move(node));
    }
    ir.layers.push_back(std::move(nl));
  }
  ir.output_width = ir.layers.back().output_width;
  return ir;
}

namespace {

BitVector concat(const std::vector<const BitVector*>& parts) {
  int width = 0;
  for (const auto* p : parts) width += p->width();
  BitVector v(width);
  int at = 0;
  for (const auto* p : parts) {
    for (int b = 0; b < p->width(); ++b) v.set(at + b, p->get(b));
    at += p->width();
  }
  return v;
}

BitVector eval_layer(const NetlistLayer& layer, const BitVector& bus) {
  if (bus.width() != layer.input_width)
    throw Error(ErrorKind::WidthMismatch, "netlist layer input is " + std::to_string(bus.width()) +
                                              " bits, expected " + std::to_string(layer.input_width));
  BitVector out(layer.output_width);
  for (const LutNode& node : layer.nodes) {
    std::uint64_t row = 0;
    for (int bit : node.input_bits) row = (row << 1) | static_cast<std::uint64_t>(bus.get(bit));
    const std::uint32_t code = node.table.lookup(row);
    for (int b = node.out_lo; b <= node.out_hi; ++b) out.set(b, (code >> (b - node.out_lo)) & 1u);
  }
  return out;
}

void check_input(const NetlistIR& ir, const BitVector& input) {
  if (input.width() != ir.input_width)
    throw Error(ErrorKind::WidthMismatch, "netlist input is " + std::to_string(input.width()) +
                                              " bits, expected " + std::to_string(ir.input_width));
}

}  // namespace

BitVector simulate(const NetlistIR& ir, const BitVector& input) {
  check_input(ir, input);
  std::vector<BitVector> outs;
  outs.reserve(ir.layers.size());
  for (const NetlistLayer& layer : ir.layers) {
    std::vector<const BitVector*> parts;
    for (int src : layer.sources) parts.push_back(src < 0 ? &input : &outs[static_cast<std::size_t>(src)]);
    outs.push_back(eval_layer(layer, parts.size() == 1 ? *parts[0] : concat(parts)));
  }
  return outs.back();
}

PipelineSimulator::PipelineSimulator(const NetlistIR& ir) : ir_(ir) {
  stages_.emplace_back(ir.input_width);
  for (const NetlistLayer& layer : ir.layers) stages_.emplace_back(layer.output_width);
  for (std::size_t d = 0; d < ir.layers.size(); ++d)
    for (int s : ir.layers[d].sources)
      if (s >= 0 && s != static_cast<int>(d) - 1) {
        Delay delay;
        delay.source = s;
        delay.destination = static_cast<int>(d);
        delay.regs.assign(static_cast<std::size_t>(d) - static_cast<std::size_t>(s) - 1,
                          BitVector(ir.layers[static_cast<std::size_t>(s)].output_width));
        delays_.push_back(std::move(delay));
      }
}

BitVector PipelineSimulator::layer_input(std::size_t layer) const {
  std::vector<const BitVector*> parts;
  for (int src : ir_.layers[layer].sources) {
    if (src == static_cast<int>(layer) - 1) {
      parts.push_back(&stages_[layer]);
      continue;
    }
    for (const Delay& d : delays_)
      if (d.source == src && d.destination == static_cast<int>(layer)) parts.push_back(&d.regs.back());
  }
  return parts.size() == 1 ? *parts[0] : concat(parts);
}

BitVector PipelineSimulator::step(const BitVector& input) {
  check_input(ir_, input);
  // Every register samples the pre-edge state.
  std::vector<BitVector> next(stages_.size());
  next[0] = input;
  for (std::size_t i = 0; i < ir_.layers.size(); ++i) next[i + 1] = eval_layer(ir_.layers[i], layer_input(i));
  for (Delay& d : delays_) {
    for (std::size_t j = d.regs.size() - 1; j > 0; --j) d.regs[j] = d.regs[j - 1];
    d.regs[0] = stages_[static_cast<std::size_t>(d.source) + 1];
  }
  stages_ = std::move(next);
  return stages_.back();
}

const BitVector& PipelineSimulator::output() const { return stages_.back(); }

BitVector simulate_pipelined(const NetlistIR& ir, const BitVector& input, int cycles) {
  if (cycles < 0) cycles = static_cast<int>(ir.layers.size()) + 1;
  PipelineSimulator sim(ir);
  for (int c = 0; c < cycles; ++c) sim.step(input);
  return sim.output();
}

}  // namespace lutnet
