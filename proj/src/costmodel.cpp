#include "lutnet/costmodel.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "json_io.hpp"

namespace lutnet {

namespace {

void check_args(int n, int m) {
  if (n <= 0 || m <= 0) throw Error(ErrorKind::InvalidSpec, "LUT cost needs positive fan-in and output bits");
  if (n > 62) throw Error(ErrorKind::InvalidSpec, "LUT cost fan-in above 62 bits overflows");
}

std::string number(double v) {
  char buf[64];
  if (v == std::floor(v) && std::fabs(v) < 1e15)
    std::snprintf(buf, sizeof buf, "%.0f", v);
  else
    std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

std::int64_t lut_cost_closed(int n, int m) {
  check_args(n, m);
  if (n < 6) return m;
  const std::int64_t sign = (n % 2 == 0) ? 1 : -1;
  return m * (((std::int64_t{1} << (n - 4)) - sign) / 3);
}

std::int64_t lut_cost_recursive(int n, int m) {
  check_args(n, m);
  if (n < 6) return m;
  std::int64_t even = m;      // LUT_6
  std::int64_t odd = 3 * m;   // LUT_7
  int k = (n % 2 == 0) ? 6 : 7;
  std::int64_t v = (n % 2 == 0) ? even : odd;
  while (k < n) {
    k += 2;
    v += m * (std::int64_t{1} << (k - 6));
  }
  return v;
}

StaticLutMapping static_6lut_map(int fan_in_bits) {
  StaticLutMapping s;
  s.fan_in_bits = fan_in_bits;
  s.lut_count = lut_cost_closed(fan_in_bits, 1);
  s.truth_table_bits = std::int64_t{1} << fan_in_bits;
  s.config_bits = 64 * s.lut_count;
  s.utilization = static_cast<double>(s.truth_table_bits) / static_cast<double>(s.config_bits);
  return s;
}

double dense_quant_linear_cost(int outputs, int inputs, int in_bits, int weight_bits) {
  if (outputs < 0 || inputs < 0 || in_bits < 0 || weight_bits < 0)
    throw Error(ErrorKind::InvalidSpec, "dense cost arguments must be non-negative");
  return outputs * (static_cast<double>(inputs) * in_bits * weight_bits * 1.0699 + 10.779);
}

ConvCosts conv_costs(std::int64_t outpix, int out_bits, int output_maps, int input_maps, int kernel_size,
                     int in_bits, int kernel_fan_in, int pointwise_fan_in) {
  if (outpix <= 0 || out_bits <= 0 || output_maps <= 0 || input_maps <= 0 || kernel_size <= 0 || in_bits <= 0 ||
      kernel_fan_in <= 0 || pointwise_fan_in <= 0)
    throw Error(ErrorKind::InvalidSpec, "convolution cost arguments must be positive");
  const std::int64_t per = outpix * out_bits * output_maps;
  ConvCosts c;
  const std::int64_t dense_bits = std::int64_t{input_maps} * kernel_size * kernel_size * in_bits;
  if (dense_bits <= 62) c.dense = per * lut_cost_closed(static_cast<int>(dense_bits), 1);
  c.depthwise = per * lut_cost_closed(kernel_fan_in * in_bits, 1);
  c.pointwise = per * lut_cost_closed(pointwise_fan_in * in_bits, 1);
  return c;
}

LutCostReport report(const TopologySpec& spec) {
  const auto geo = resolve_geometry(spec);
  LutCostReport r;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    LayerCost c;
    c.index = static_cast<int>(i);
    c.kind = l.kind;
    c.neurons = l.neurons;
    c.out_bits = l.out_bit_width;
    switch (l.kind) {
      case LayerKind::SparseLinear:
        c.fan_in_bits = l.fan_in * l.in_bit_width;
        c.luts = static_cast<double>(l.neurons * lut_cost_closed(c.fan_in_bits, l.out_bit_width));
        break;
      case LayerKind::DenseQuantLinear:
        c.luts = dense_quant_linear_cost(l.neurons, geo[i].input_width, l.in_bit_width, l.weight_bit_width);
        break;
      case LayerKind::SparseConv: {
        const ConvCosts cc = conv_costs(geo[i].output_pixels(), l.out_bit_width, l.neurons,
                                        geo[i].input_shape->channels, l.kernel_size, l.in_bit_width,
                                        l.kernel_fan_in, l.pointwise_fan_in);
        c.fan_in_bits = l.kernel_fan_in * l.in_bit_width;
        c.depthwise = cc.depthwise;
        c.pointwise = cc.pointwise;
        c.dense_equivalent = cc.dense;
        c.luts = static_cast<double>(cc.depthwise + cc.pointwise);
        break;
      }
    }
    r.total += c.luts;
    r.layers.push_back(c);
  }
  return r;
}

std::string format_text(const LutCostReport& r) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %-19s %8s %12s %9s %14s\n", "layer", "kind", "neurons", "fan-in bits",
                "out bits", "LUTs");
  os << line;
  for (const LayerCost& c : r.layers) {
    // Dense layers have no per-neuron table, so no fan-in bit count.
    const std::string fan_in = c.kind == LayerKind::DenseQuantLinear ? "-" : std::to_string(c.fan_in_bits);
    std::snprintf(line, sizeof line, "%-6d %-19s %8d %12s %9d %14s\n", c.index, to_string(c.kind), c.neurons,
                  fan_in.c_str(), c.out_bits, number(c.luts).c_str());
    os << line;
    if (c.depthwise) {
      std::snprintf(line, sizeof line, "%-6s %-19s %8s %12s %9s %14s\n", "", "  depthwise", "", "", "",
                    number(static_cast<double>(*c.depthwise)).c_str());
      os << line;
      std::snprintf(line, sizeof line, "%-6s %-19s %8s %12s %9s %14s\n", "", "  pointwise", "", "", "",
                    number(static_cast<double>(*c.pointwise)).c_str());
      os << line;
      std::snprintf(line, sizeof line, "%-6s %-19s %8s %12s %9s %14s\n", "", "  (dense equiv.)", "", "", "",
                    c.dense_equivalent ? number(static_cast<double>(*c.dense_equivalent)).c_str() : "n/a");
      os << line;
    }
  }
  std::snprintf(line, sizeof line, "%-6s %-19s %8s %12s %9s %14s\n", "total", "", "", "", "", number(r.total).c_str());
  os << line;
  return os.str();
}

std::string format_json(const LutCostReport& r) {
  detail::Json j;
  detail::Json layers = detail::Json::array();
  for (const LayerCost& c : r.layers) {
    detail::Json o;
    o["index"] = c.index;
    o["kind"] = to_string(c.kind);
    o["neurons"] = c.neurons;
    o["fan_in_bits"] = c.fan_in_bits;
    o["out_bits"] = c.out_bits;
    o["luts"] = c.luts;
    if (c.depthwise) {
      o["depthwise"] = *c.depthwise;
      o["pointwise"] = *c.pointwise;
      o["dense_equivalent"] = c.dense_equivalent ? detail::Json(*c.dense_equivalent) : detail::Json();
    }
    layers.push_back(std::move(o));
  }
  j["layers"] = std::move(layers);
  j["total"] = r.total;
  return j.dump(2) + "\n";
}

std::string format_static_table(int first, int last) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %8s %18s %12s %12s\n", "fan-in bits", "6-LUTs", "truth-table bits",
                "config bits", "utilization");
  os << line;
  for (int n = first; n <= last; ++n) {
    const StaticLutMapping s = static_6lut_map(n);
    std::snprintf(line, sizeof line, "%-12d %8lld %18lld %12lld %11.2f%%\n", n, static_cast<long long>(s.lut_count),
                  static_cast<long long>(s.truth_table_bits), static_cast<long long>(s.config_bits),
                  100.0 * s.utilization);
    os << line;
  }
  return os.str();
}

}  // namespace lutnet
