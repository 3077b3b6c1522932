#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lutnet/model.hpp"
#include "lutnet/topology.hpp"

namespace lutnet {

/// 6:1 LUTs needed for an N-input, M-output boolean function:
/// M * (2^(N-4) - (-1)^N) / 3. Below N = 6 every output bit still takes one
/// LUT, so the result is M. Throws InvalidSpec for N <= 0, M <= 0 or N > 62.
std::int64_t lut_cost_closed(int fan_in_bits, int out_bits);

/// Same quantity from the two-step recurrence LUT_N = LUT_{N-2} + M*2^(N-6)
/// seeded with LUT_6 = M, LUT_7 = 3M.
std::int64_t lut_cost_recursive(int fan_in_bits, int out_bits);

struct StaticLutMapping {
  int fan_in_bits = 0;
  std::int64_t lut_count = 0;
  std::int64_t truth_table_bits = 0;
  std::int64_t config_bits = 0;
  double utilization = 0.0;  // truth_table_bits / config_bits, in [0, 1]
};

StaticLutMapping static_6lut_map(int fan_in_bits);

/// Fitted cost of a dense quantized linear layer:
/// nO * (nI * BW_in * BW_wt * 1.0699 + 10.779).
double dense_quant_linear_cost(int outputs, int inputs, int in_bits, int weight_bits);

struct ConvCosts {
  std::optional<std::int64_t> dense;  // unset when the unfolded kernel exceeds 62 fan-in bits
  std::int64_t depthwise = 0;
  std::int64_t pointwise = 0;
};

/// The three unfolded-convolution costs; each term is
/// outpix * oBits * nOFM * LUT(taps * iBits, 1) with taps nIFM*k^2, X_k, X_s.
ConvCosts conv_costs(std::int64_t outpix, int out_bits, int output_maps, int input_maps, int kernel_size,
                     int in_bits, int kernel_fan_in, int pointwise_fan_in);

struct LayerCost {
  int index = 0;
  LayerKind kind = LayerKind::SparseLinear;
  int neurons = 0;
  int fan_in_bits = 0;  // synapses * input bits; 0 for dense layers
  int out_bits = 0;
  double luts = 0.0;
  std::optional<std::int64_t> depthwise;
  std::optional<std::int64_t> pointwise;
  std::optional<std::int64_t> dense_equivalent;
};

struct LutCostReport {
  std::vector<LayerCost> layers;
  double total = 0.0;  // sum of layers[].luts
};

LutCostReport report(const TopologySpec& spec);
inline LutCostReport report(const Model& model) { return report(model.topology); }

std::string format_text(const LutCostReport& r);
std::string format_json(const LutCostReport& r);
std::string format_static_table(int first_fan_in, int last_fan_in);

}  // namespace lutnet
