#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lutnet/tablegen.hpp"

namespace lutnet {

enum class NetlistStyle { Combinational, Pipelined };

const char* to_string(NetlistStyle style);
NetlistStyle netlist_style_from_string(const std::string& name);

/// Bit-addressable vector; bit 0 is the least significant bus bit.
class BitVector {
 public:
  BitVector() = default;
  explicit BitVector(int width) : width_(width), words_(static_cast<std::size_t>((width + 63) / 64), 0) {}

  int width() const noexcept { return width_; }
  bool get(int i) const { return (words_[static_cast<std::size_t>(i) >> 6] >> (i & 63)) & 1u; }
  void set(int i, bool v) {
    const std::uint64_t bit = std::uint64_t{1} << (i & 63);
    auto& w = words_[static_cast<std::size_t>(i) >> 6];
    w = v ? (w | bit) : (w & ~bit);
  }
  /// MSB-first string, as in a Verilog binary literal.
  std::string to_string() const;

  friend bool operator==(const BitVector&, const BitVector&) = default;

 private:
  int width_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Feature codes of `bits` each packed with feature f at bits [f*bits+bits-1 : f*bits].
BitVector pack_codes(std::span<const std::uint32_t> codes, int bits);
std::vector<std::uint32_t> unpack_codes(const BitVector& v, int bits);

/// One neuron: its selected input-bus bits (MSB of the row index first) and
/// the output-bus slice it drives.
struct LutNode {
  std::vector<int> input_bits;
  int field_bits = 1;
  int out_lo = 0;
  int out_hi = 0;
  TruthTable table;
};

struct NetlistLayer {
  /// Producers concatenated into the input bus, first one at the LSB end;
  /// -1 is the primary input.
  std::vector<int> sources;
  int input_width = 0;
  int output_width = 0;
  std::vector<LutNode> nodes;
};

struct NetlistIR {
  NetlistStyle style = NetlistStyle::Combinational;
  int input_width = 0;
  int output_width = 0;
  int input_code_bits = 1;
  int output_code_bits = 1;
  std::vector<NetlistLayer> layers;

  /// Register stages: the input register plus one after every layer.
  int register_stages() const noexcept {
    return style == NetlistStyle::Pipelined ? static_cast<int>(layers.size()) + 1 : 0;
  }
  /// Clock edges between applying an input and seeing its output.
  int latency() const noexcept { return register_stages(); }
};

/// Requires a model made only of sparse_linear layers with tables for each.
/// Throws UnsupportedLayer naming the first other layer.
NetlistIR build_netlist(const Model& model, const ModelTables& tables, NetlistStyle style);

/// Combinational evaluation (ignores the style's registers).
BitVector simulate(const NetlistIR& ir, const BitVector& input);

/// Cycle-accurate model of the pipelined netlist. Registers power up at zero;
/// there is no reset. Skip links from layer s into layer d pass through
/// d - s - 1 extra registers so both operands of a layer belong to the same
/// input sample.
class PipelineSimulator {
 public:
  explicit PipelineSimulator(const NetlistIR& ir);
  /// One rising clock edge with `input` on M0. Returns M1 after the edge.
  BitVector step(const BitVector& input);
  const BitVector& output() const;

 private:
  BitVector layer_input(std::size_t layer) const;

  const NetlistIR& ir_;
  std::vector<BitVector> stages_;  // R0 .. R_L
  // delays_[k] for skip link k: chain of registers fed by its source stage.
  struct Delay {
    int source = 0;
    int destination = 0;
    std::vector<BitVector> regs;
  };
  std::vector<Delay> delays_;
};

/// Holds `input` for `cycles` edges (default: the latency) and returns M1.
BitVector simulate_pipelined(const NetlistIR& ir, const BitVector& input, int cycles = -1);

struct VerilogFile {
  std::string name;  // file name, module name + ".v" (or "files.f")
  std::string text;
};

/// Neuron modules first, then layer modules, then the top module, then the
/// files.f manifest listing the sources in that order.
std::vector<VerilogFile> emit_verilog(const NetlistIR& ir);
void write_verilog(const std::vector<VerilogFile>& files, const std::filesystem::path& dir);

}  // namespace lutnet
