#pragma once

// Shared builders and oracles for the unit tests and the acceptance runner.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lutnet/model.hpp"
#include "lutnet/netlist.hpp"

namespace lutnet::testing {

struct LinearLayerShape {
  int neurons = 1;
  int fan_in = 1;
  int out_bits = 1;
  double max_val = 1.0;
};

TopologySpec linear_spec(int inputs, int in_bits, const std::vector<LinearLayerShape>& layers,
                         std::uint64_t seed = 1, double in_max = 1.0);

/// One sparse_conv layer on an h x w x c image, 2-bit activations
/// throughout.
TopologySpec conv_spec(int h, int w, int c, int k, int stride, int maps, int xk, int xs, bool first,
                       std::uint64_t seed);

/// Gives every batch norm random, well-conditioned statistics so that tables
/// are not trivially constant.
void randomize_batchnorm(Model& model, Rng& rng);

/// 1-3 sparse_linear layers of 2-6 neurons, fan-in 2-4, bit widths 1-3, random quantizer
/// ranges and batch norms.
Model random_sparse_model(Rng& rng);

std::vector<std::uint32_t> random_codes(Rng& rng, int count, int bits);

/// Single-layer worked example: five 1-bit inputs, three 1-bit neurons
/// with masks {0,2,4}, {1,2,3}, {0,1,2}. Weights chosen so the tables are the
/// listed ones: neuron 0 fires on at most one set bit, neurons 1 and 2 on a
/// clear last field.
Model three_neuron_model();

/// 4 inputs -> 2 neurons of fan-in 3, 3-bit in/out on [0, 1] and [0, 4]:
/// six weights plus two gammas and two betas, with batch norm shifted so the
/// outputs sit inside the clamp.
Model ten_parameter_model();

/// Parameter k of ten_parameter_model in the order weights (neuron-major,
/// mask order), gammas, betas.
double& ten_parameter(Model& m, int k);

/// Minimal evaluator for the Verilog subset the emitter produces: case-table
/// neuron modules, wire concatenations, module instances, nonblocking
/// register updates and continuous assigns. Parses text only, so it shares no
/// code with the netlist simulator.
class VerilogEvaluator {
 public:
  explicit VerilogEvaluator(const std::vector<VerilogFile>& files);

  /// Settles the combinational logic of the top module for `input` and
  /// returns M1. For pipelined designs, clocks `cycles` edges first.
  std::vector<bool> run(const std::vector<bool>& input, int cycles = 0);

  bool has_clock() const { return top_.clocked; }

 private:
  struct Slice {
    std::string signal;
    int hi = -1;  // -1: whole signal
    int lo = -1;
  };
  struct Instance {
    std::string module;
    std::vector<Slice> in;  // concatenation, MSB first
    Slice out;
  };
  struct Module {
    std::string name;
    std::map<std::string, int> widths;
    std::map<std::string, std::vector<Slice>> wires;  // name -> concatenation
    std::vector<Instance> instances;
    std::vector<std::pair<std::string, Slice>> registers;  // lhs <= rhs
    std::vector<std::pair<std::string, Slice>> assigns;
    bool clocked = false;
    // neuron modules
    bool is_table = false;
    int in_width = 0;
    int out_width = 0;
    std::vector<std::string> rows;
  };

  using Signals = std::map<std::string, std::vector<bool>>;
  static Module parse(const std::string& text);
  std::vector<bool> eval_module(const Module& m, const std::vector<bool>& in);
  void settle(const Module& m, Signals& s);
  static std::vector<bool> read(const Signals& s, const Slice& slice);
  static std::vector<bool> concat(const Signals& s, const std::vector<Slice>& parts);

  std::map<std::string, Module> modules_;
  Module top_;
  Signals state_;
};

std::vector<bool> to_bools(const BitVector& v);

}  // namespace lutnet::testing
