#include <fstream>
#include <sstream>

#include "lutnet/netlist.hpp"

namespace lutnet {

namespace {

constexpr const char* kIndent = "        ";

std::string range(int width) { return "[" + std::to_string(width - 1) + ":0]"; }

std::string neuron_name(std::size_t layer, std::size_t neuron) {
  return "LUT_L" + std::to_string(layer) + "_N" + std::to_string(neuron);
}

std::string layer_name(std::size_t layer) { return "LUTLayer" + std::to_string(layer); }

std::string neuron_module(const std::string& name, const LutNode& node) {
  const int k = node.table.input_bits();
  const int m = node.table.out_bits;
  std::ostringstream os;
  os << "module " << name << " ( input " << range(k) << " M0, output " << range(m) << " M1 );\n";
  os << kIndent << "reg " << range(m) << " M1;\n";
  os << kIndent << "always @ (M0) begin\n";
  os << kIndent << kIndent << "case (M0)\n";
  for (std::uint64_t r = 0; r < node.table.rows(); ++r)
    os << kIndent << kIndent << kIndent << k << "'d" << r << ": M1 = " << m << "'b"
       << code_to_bits(node.table.lookup(r), m) << ";\n";
  os << kIndent << kIndent << "endcase\n";
  os << kIndent << "end\n";
  os << "endmodule\n";
  return os.str();
}

/// `{M0[a], M0[b], ...}` with multi-bit fields as part-selects.
std::string selection(const LutNode& node) {
  std::ostringstream os;
  os << '{';
  const std::size_t fields = node.input_bits.size() / static_cast<std::size_t>(node.field_bits);
  for (std::size_t f = 0; f < fields; ++f) {
    if (f) os << ", ";
    const int hi = node.input_bits[f * static_cast<std::size_t>(node.field_bits)];
    const int lo = hi - node.field_bits + 1;
    if (node.field_bits == 1)
      os << "M0[" << hi << ']';
    else
      os << "M0[" << hi << ':' << lo << ']';
  }
  os << '}';
  return os.str();
}

std::string layer_module(std::size_t index, const NetlistLayer& layer) {
  std::ostringstream os;
  os << "module " << layer_name(index) << " (input " << range(layer.input_width) << " M0, output "
     << range(layer.output_width) << " M1\n);\n";
  for (std::size_t n = 0; n < layer.nodes.size(); ++n) {
    const LutNode& node = layer.nodes[n];
    const std::string wire = "inpWire" + std::to_string(index) + "_" + std::to_string(n);
    os << "wire " << range(static_cast<int>(node.input_bits.size())) << ' ' << wire << " = " << selection(node)
       << ";\n";
    os << neuron_name(index, n) << ' ' << neuron_name(index, n) << "_inst (.M0(" << wire << "), .M1(M1["
       << node.out_hi << ':' << node.out_lo << "]));\n\n";
  }
  os << "endmodule\n";
  return os.str();
}

std::string delay_name(int s, std::size_t d, std::size_t j) {
  return "D" + std::to_string(s) + "_" + std::to_string(d) + "_" + std::to_string(j);
}

std::string top_module(const NetlistIR& ir) {
  const bool piped = ir.style == NetlistStyle::Pipelined;
  const std::size_t L = ir.layers.size();
  std::ostringstream os;
  os << "module LogicNetModule (" << (piped ? "input clk, " : "") << "input " << range(ir.input_width)
     << " M0, output" << range(ir.output_width) << " M1);\n";

  auto width_of = [&](int src) { return src < 0 ? ir.input_width : ir.layers[static_cast<std::size_t>(src)].output_width; };
  // Name of the signal carrying layer `src`'s output as seen by layer `dst`.
  auto signal = [&](int src, std::size_t dst) -> std::string {
    if (piped) {
      if (src == static_cast<int>(dst) - 1) return "R" + std::to_string(dst);
      return delay_name(src, dst, dst - static_cast<std::size_t>(src) - 2);
    }
    if (src < 0) return "M0";
    return "A" + std::to_string(src);
  };

  if (piped) {
    os << kIndent << "reg " << range(ir.input_width) << " R0;\n";
    for (std::size_t i = 0; i < L; ++i) os << kIndent << "reg " << range(ir.layers[i].output_width) << " R" << i + 1 << ";\n";
    for (std::size_t d = 0; d < L; ++d)
      for (int s : ir.layers[d].sources)
        if (s >= 0 && s != static_cast<int>(d) - 1)
          for (std::size_t j = 0; j + 1 + static_cast<std::size_t>(s) < d; ++j)
            os << kIndent << "reg " << range(width_of(s)) << ' ' << delay_name(s, d, j) << ";\n";
  }
  const std::size_t wires = piped ? L : L - 1;
  for (std::size_t i = 0; i < wires; ++i) os << kIndent << "wire " << range(ir.layers[i].output_width) << " A" << i << ";\n";

  for (std::size_t i = 0; i < L; ++i) {
    const NetlistLayer& layer = ir.layers[i];
    std::string in;
    if (layer.sources.size() == 1) {
      in = piped && i == 0 ? "R0" : signal(layer.sources[0], i);
    } else {
      in = "LIn" + std::to_string(i);
      os << kIndent << "wire " << range(layer.input_width) << ' ' << in << " = {";
      for (std::size_t k = layer.sources.size(); k-- > 0;) {
        os << signal(layer.sources[k], i);
        if (k) os << ", ";
      }
      os << "};\n";
    }
    const std::string out = (!piped && i + 1 == L) ? "M1" : "A" + std::to_string(i);
    os << kIndent << layer_name(i) << "  " << layer_name(i) << "_inst (.M0(" << in << "), .M1(" << out << "));\n";
  }

  if (piped) {
    os << kIndent << "always @ (posedge clk) begin\n";
    os << kIndent << kIndent << "R0 <= M0;\n";
    for (std::size_t i = 0; i < L; ++i) os << kIndent << kIndent << 'R' << i + 1 << " <= A" << i << ";\n";
    for (std::size_t d = 0; d < L; ++d)
      for (int s : ir.layers[d].sources)
        if (s >= 0 && s != static_cast<int>(d) - 1)
          for (std::size_t j = 0; j + 1 + static_cast<std::size_t>(s) < d; ++j)
            os << kIndent << kIndent << delay_name(s, d, j) << " <= "
               << (j == 0 ? "R" + std::to_string(s + 1) : delay_name(s, d, j - 1)) << ";\n";
    os << kIndent << "end\n";
    os << kIndent << "assign M1 = R" << L << ";\n";
  }
  os << "endmodule\n";
  return os.str();
}

}  // namespace

std::vector<VerilogFile> emit_verilog(const NetlistIR& ir) {
  std::vector<VerilogFile> files;
  for (std::size_t i = 0; i < ir.layers.size(); ++i)
    for (std::size_t n = 0; n < ir.layers[i].nodes.size(); ++n) {
      const std::string name = neuron_name(i, n);
      files.push_back({name + ".v", neuron_module(name, ir.layers[i].nodes[n])});
    }
  for (std::size_t i = 0; i < ir.layers.size(); ++i)
    files.push_back({layer_name(i) + ".v", layer_module(i, ir.layers[i])});
  files.push_back({"LogicNetModule.v", top_module(ir)});
  std::string manifest;
  for (const auto& f : files) manifest += f.name + "\n";
  files.push_back({"files.f", manifest});
  return files;
}

void write_verilog(const std::vector<VerilogFile>& files, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& f : files) {
    std::ofstream out(dir / f.name, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / f.name).string());
    out << f.text;
  }
}

}  // namespace lutnet
