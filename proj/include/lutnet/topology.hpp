#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lutnet/common.hpp"
#include "lutnet/quantizer.hpp"

namespace lutnet {

enum class LayerKind { SparseLinear, DenseQuantLinear, SparseConv };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct SpatialShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  int size() const noexcept { return height * width * channels; }
  friend bool operator==(const SpatialShape&, const SpatialShape&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::SparseLinear;
  int neurons = 0;  // output feature maps for convolutions
  int fan_in = 0;   // synapses per neuron, sparse_linear only
  int in_bit_width = 1;
  int out_bit_width = 1;
  double max_val_in = 1.0;
  double max_val_out = 1.0;

  // sparse_conv
  int kernel_size = 0;
  int stride = 1;
  int kernel_fan_in = 0;     // nonzeros per depthwise kernel
  int pointwise_fan_in = 0;  // channel taps per pointwise neuron
  int intermediate_bit_width = 0;
  double max_val_intermediate = 1.0;
  bool first_layer = false;

  // dense_quant_linear
  int weight_bit_width = 0;
  double max_weight = 1.0;

  QuantizerParams input_quantizer() const { return {in_bit_width, max_val_in}; }
  QuantizerParams output_quantizer() const { return {out_bit_width, max_val_out}; }
  QuantizerParams intermediate_quantizer() const {
    return {intermediate_bit_width, max_val_intermediate};
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// The output of `source` is concatenated onto the input of `destination`.
struct SkipLink {
  int source = 0;
  int destination = 0;
  friend bool operator==(const SkipLink&, const SkipLink&) = default;
};

inline constexpr int kDefaultTableGenLimit = 24;

struct TopologySpec {
  int input_features = 0;
  int input_bit_width = 1;
  std::uint64_t seed = 0;
  std::vector<LayerSpec> layers;
  std::vector<SkipLink> skip_links;
  std::optional<SpatialShape> input_shape;  // required when a convolution is present
  int table_gen_limit = kDefaultTableGenLimit;

  friend bool operator==(const TopologySpec&, const TopologySpec&) = default;
};

/// Shapes each layer sees once skips are resolved.
struct LayerGeometry {
  /// Producers concatenated (in this order, lowest feature index first) to
  /// form the layer input. -1 is the primary input.
  std::vector<int> sources;
  int input_width = 0;
  int output_width = 0;
  std::optional<SpatialShape> input_shape;
  std::optional<SpatialShape> output_shape;
  int depthwise_kernels = 0;  // convolutions only

  int output_pixels() const { return output_shape ? output_shape->height * output_shape->width : 0; }
};

/// Validates the spec and derives per-layer geometry. Throws
/// ErrorKind::InvalidSpec naming the first offending layer.
std::vector<LayerGeometry> resolve_geometry(const TopologySpec& spec);
inline void validate(const TopologySpec& spec) { (void)resolve_geometry(spec); }

/// Per-neuron strictly ascending input indices.
struct ConnectivityMask {
  int input_width = 0;
  std::vector<std::vector<int>> rows;

  int neurons() const noexcept { return static_cast<int>(rows.size()); }
  bool contains(int neuron, int input) const;
  /// Dense 0/1 matrix (neurons x input_width).
  MatrixXd dense() const;
  /// Checks ordering, bounds and (when expected_fan_in > 0) cardinality.
  void validate(int expected_fan_in, const std::string& where) const;

  friend bool operator==(const ConnectivityMask&, const ConnectivityMask&) = default;
};

/// Masks of one layer. For convolutions `mask` is the depthwise kernel mask
/// (indices into the k*k window) and `pointwise` the channel-tap mask.
struct LayerMasks {
  ConnectivityMask mask;
  ConnectivityMask pointwise;
};

/// Uniform random fan-in subsets; neuron n of layer l draws from a stream
/// seeded by (seed, l, n), so masks do not depend on evaluation order.
std::vector<LayerMasks> init_random_masks(const TopologySpec& spec, std::uint64_t seed);

ConnectivityMask random_mask(int neurons, int input_width, int fan_in, std::uint64_t seed,
                             std::uint64_t layer, std::uint64_t stage = 0);

struct ErdosRenyiAllocation {
  std::vector<double> sparsity;  // one entry per consecutive width pair
  std::vector<std::string> warnings;
};

/// Layer sparsity 1 - (n_prev + n) / (n_prev * n), clamped into [0, 1].
ErdosRenyiAllocation erdos_renyi_allocation(const std::vector<int>& layer_widths);

/// How many times a (n2, b2) layer "fits" into a (n1, b1) budget:
/// n2 * 2^(b2 - b1) / n1.
double ensemble_ratio(int n1, int b1, int n2, int b2);

TopologySpec parse_topology(const std::string& json_text);
TopologySpec load_topology(const std::filesystem::path& path);
std::string dump_topology(const TopologySpec& spec);

}  // namespace lutnet
