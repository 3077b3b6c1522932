#include "lutnet/topology.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace lutnet {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::SparseLinear: return "sparse_linear";
    case LayerKind::DenseQuantLinear: return "dense_quant_linear";
    case LayerKind::SparseConv: return "sparse_conv";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "sparse_linear") return LayerKind::SparseLinear;
  if (name == "dense_quant_linear") return LayerKind::DenseQuantLinear;
  if (name == "sparse_conv") return LayerKind::SparseConv;
  throw Error(ErrorKind::InvalidSpec, "unknown layer kind '" + name + "'");
}

namespace {

[[noreturn]] void invalid(int layer, const std::string& msg) {
  std::ostringstream os;
  if (layer >= 0) os << "layer " << layer << ": ";
  os << msg;
  throw Error(ErrorKind::InvalidSpec, os.str());
}

void check_quantizer(int layer, const QuantizerParams& q, const char* which) {
  try {
    q.validate();
  } catch (const Error& e) {
    invalid(layer, std::string(which) + " " + e.what());
  }
}

}  // namespace

std::vector<LayerGeometry> resolve_geometry(const TopologySpec& spec) {
  if (spec.input_features <= 0) invalid(-1, "input_features must be positive");
  if (spec.layers.empty()) invalid(-1, "topology has no layers");
  if (spec.table_gen_limit <= 0 || spec.table_gen_limit > 32)
    invalid(-1, "table_gen_limit must be in [1, 32]");
  if (spec.input_shape) {
    const auto& s = *spec.input_shape;
    if (s.height <= 0 || s.width <= 0 || s.channels <= 0) invalid(-1, "input_shape dims must be positive");
    if (s.size() != spec.input_features) invalid(-1, "input_shape does not match input_features");
  }
  const int n = static_cast<int>(spec.layers.size());
  for (const auto& link : spec.skip_links) {
    if (link.source < 0 || link.destination >= n || link.source >= link.destination)
      invalid(-1, "skip link (" + std::to_string(link.source) + ", " +
                      std::to_string(link.destination) + ") must satisfy 0 <= source < destination < layers");
    if (link.source == link.destination - 1)
      invalid(-1, "skip link from layer " + std::to_string(link.source) +
                      " duplicates the direct connection");
  }
  for (std::size_t a = 0; a < spec.skip_links.size(); ++a)
    for (std::size_t b = a + 1; b < spec.skip_links.size(); ++b)
      if (spec.skip_links[a] == spec.skip_links[b]) invalid(-1, "duplicate skip link");

  std::vector<LayerGeometry> geo(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const LayerSpec& layer = spec.layers[static_cast<std::size_t>(i)];
    LayerGeometry& g = geo[static_cast<std::size_t>(i)];
    if (layer.neurons <= 0) invalid(i, "neuron count must be positive");
    check_quantizer(i, layer.input_quantizer(), "input quantizer");
    check_quantizer(i, layer.output_quantizer(), "output quantizer");

    g.sources.push_back(i - 1);
    std::vector<int> skips;
    for (const auto& link : spec.skip_links)
      if (link.destination == i) skips.push_back(link.source);
    std::sort(skips.begin(), skips.end());
    g.sources.insert(g.sources.end(), skips.begin(), skips.end());

    if (i == 0) {
      if (layer.in_bit_width != spec.input_bit_width)
        invalid(i, "in_bit_width differs from the topology input_bit_width");
    }
    for (int src : g.sources) {
      if (src < 0) continue;
      const LayerSpec& producer = spec.layers[static_cast<std::size_t>(src)];
      if (!(producer.output_quantizer() == layer.input_quantizer()))
        invalid(i, "input quantizer differs from the output quantizer of layer " + std::to_string(src));
    }

    // Input width, and the spatial shape if every producer is spatial.
    bool spatial = true;
    int width = 0;
    std::optional<SpatialShape> shape;
    for (int src : g.sources) {
      std::optional<SpatialShape> s;
      int w = 0;
      if (src < 0) {
        s = spec.input_shape;
        w = spec.input_features;
      } else {
        s = geo[static_cast<std::size_t>(src)].output_shape;
        w = geo[static_cast<std::size_t>(src)].output_width;
      }
      width += w;
      if (!s) {
        spatial = false;
      } else if (!shape) {
        shape = s;
      } else if (shape->height != s->height || shape->width != s->width) {
        spatial = false;
      } else {
        shape->channels += s->channels;
      }
    }
    g.input_width = width;
    if (spatial) g.input_shape = shape;

    switch (layer.kind) {
      case LayerKind::SparseLinear:
        if (layer.fan_in < 1 || layer.fan_in > width)
          invalid(i, "fan_in " + std::to_string(layer.fan_in) + " outside [1, " + std::to_string(width) + "]");
        g.output_width = layer.neurons;
        break;
      case LayerKind::DenseQuantLinear:
        if (layer.weight_bit_width < 2 || layer.weight_bit_width > 16)
          invalid(i, "weight_bit_width must be in [2, 16]");
        if (!(layer.max_weight > 0.0)) invalid(i, "max_weight must be positive");
        g.output_width = layer.neurons;
        break;
      case LayerKind::SparseConv: {
        if (!g.input_shape) invalid(i, "sparse_conv needs a spatial input (set input_shape; convolutions may not follow linear layers)");
        const SpatialShape in = *g.input_shape;
        const int k = layer.kernel_size;
        if (k < 1) invalid(i, "kernel_size must be positive");
        if (layer.stride < 1) invalid(i, "stride must be positive");
        if (in.height < k || in.width < k) invalid(i, "input smaller than the kernel (no padding is applied)");
        if (layer.kernel_fan_in < 1 || layer.kernel_fan_in > k * k)
          invalid(i, "kernel_fan_in outside [1, kernel_size^2]");
        check_quantizer(i, layer.intermediate_quantizer(), "intermediate quantizer");
        g.depthwise_kernels = (layer.first_layer && in.channels == 1) ? layer.neurons : in.channels;
        if (layer.pointwise_fan_in < 1 || layer.pointwise_fan_in > g.depthwise_kernels)
          invalid(i, "pointwise_fan_in outside [1, " + std::to_string(g.depthwise_kernels) + "]");
        SpatialShape out;
        out.height = 1 + (in.height - k) / layer.stride;
        out.width = 1 + (in.width - k) / layer.stride;
        out.channels = layer.neurons;
        g.output_shape = out;
        g.output_width = out.size();
        break;
      }
    }
  }
  return geo;
}

bool ConnectivityMask::contains(int neuron, int input) const {
  const auto& row = rows[static_cast<std::size_t>(neuron)];
  return std::binary_search(row.begin(), row.end(), input);
}

MatrixXd ConnectivityMask::dense() const {
  MatrixXd m = MatrixXd::Zero(neurons(), input_width);
  for (int n = 0; n < neurons(); ++n)
    for (int j : rows[static_cast<std::size_t>(n)]) m(n, j) = 1.0;
  return m;
}

void ConnectivityMask::validate(int expected_fan_in, const std::string& where) const {
  for (int n = 0; n < neurons(); ++n) {
    const auto& row = rows[static_cast<std::size_t>(n)];
    if (expected_fan_in > 0 && static_cast<int>(row.size()) != expected_fan_in)
      throw Error(ErrorKind::InvariantViolation,
                  where + ": neuron " + std::to_string(n) + " has fan-in " +
                      std::to_string(row.size()) + ", expected " + std::to_string(expected_fan_in));
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (row[k] < 0 || row[k] >= input_width)
        throw Error(ErrorKind::InvariantViolation,
                    where + ": neuron " + std::to_string(n) + " index out of range");
      if (k > 0 && row[k] <= row[k - 1])
        throw Error(ErrorKind::InvariantViolation,
                    where + ": neuron " + std::to_string(n) + " indices not strictly ascending");
    }
  }
}

ConnectivityMask random_mask(int neurons, int input_width, int fan_in, std::uint64_t seed,
                             std::uint64_t layer, std::uint64_t stage) {
  if (fan_in < 1 || fan_in > input_width)
    throw Error(ErrorKind::InvalidSpec, "fan_in " + std::to_string(fan_in) +
                                            " exceeds input width " + std::to_string(input_width));
  ConnectivityMask mask;
  mask.input_width = input_width;
  mask.rows.reserve(static_cast<std::size_t>(neurons));
  for (int n = 0; n < neurons; ++n) {
    Rng rng = Rng::derive(seed, {layer, stage, static_cast<std::uint64_t>(n)});
    mask.rows.push_back(rng.sample_subset(input_width, fan_in));
  }
  return mask;
}

std::vector<LayerMasks> init_random_masks(const TopologySpec& spec, std::uint64_t seed) {
  const auto geo = resolve_geometry(spec);
  std::vector<LayerMasks> masks(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const LayerGeometry& g = geo[i];
    switch (layer.kind) {
      case LayerKind::SparseLinear:
        masks[i].mask = random_mask(layer.neurons, g.input_width, layer.fan_in, seed, i, 0);
        break;
      case LayerKind::SparseConv:
        masks[i].mask = random_mask(g.depthwise_kernels, layer.kernel_size * layer.kernel_size,
                                    layer.kernel_fan_in, seed, i, 1);
        masks[i].pointwise = random_mask(layer.neurons, g.depthwise_kernels,
                                         layer.pointwise_fan_in, seed, i, 2);
        break;
      case LayerKind::DenseQuantLinear:
        break;
    }
  }
  return masks;
}

ErdosRenyiAllocation erdos_renyi_allocation(const std::vector<int>& layer_widths) {
  if (layer_widths.size() < 2)
    throw Error(ErrorKind::InvalidSpec, "Erdos-Renyi allocation needs at least two layer widths");
  for (int w : layer_widths)
    if (w <= 0) throw Error(ErrorKind::InvalidSpec, "layer widths must be positive");
  ErdosRenyiAllocation out;
  for (std::size_t l = 1; l < layer_widths.size(); ++l) {
    const double prev = layer_widths[l - 1];
    const double cur = layer_widths[l];
    const double s = 1.0 - (prev + cur) / (prev * cur);
    if (s < 0.0 || s > 1.0) {
      std::ostringstream os;
      os << "widths (" << layer_widths[l - 1] << ", " << layer_widths[l] << ") give sparsity " << s
         << "; clamped to [0, 1]";
      out.warnings.push_back(os.str());
    }
    out.sparsity.push_back(std::clamp(s, 0.0, 1.0));
  }
  return out;
}

double ensemble_ratio(int n1, int b1, int n2, int b2) {
  if (n1 <= 0 || b1 <= 0 || n2 <= 0 || b2 <= 0)
    throw Error(ErrorKind::InvalidSpec, "ensemble_ratio arguments must be positive");
  return static_cast<double>(n2) * std::ldexp(1.0, b2 - b1) / static_cast<double>(n1);
}

TopologySpec parse_topology(const std::string& json_text) {
  const auto j = detail::parse_json(json_text, "topology");
  auto spec = detail::topology_from_json(j);
  validate(spec);
  return spec;
}

TopologySpec load_topology(const std::filesystem::path& path) {
  return parse_topology(detail::read_file(path));
}

std::string dump_topology(const TopologySpec& spec) { return detail::topology_to_json(spec).dump(2); }

}  // namespace lutnet
