#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lutnet/model.hpp"

namespace lutnet {

/// Exhaustive map from packed input code to output code for one neuron.
/// Row index packs `fields` codes of `field_bits` each; field 0 (the lowest
/// mask index) is the most significant.
struct TruthTable {
  int fields = 0;
  int field_bits = 1;
  int out_bits = 1;
  std::vector<std::uint16_t> outputs;  // 2^(fields * field_bits) entries

  int input_bits() const noexcept { return fields * field_bits; }
  std::uint64_t rows() const noexcept { return std::uint64_t{1} << input_bits(); }
  std::uint32_t lookup(std::uint64_t row) const { return outputs[static_cast<std::size_t>(row)]; }
  std::vector<std::string> input_strings() const;
  std::vector<std::string> output_strings() const;

  friend bool operator==(const TruthTable&, const TruthTable&) = default;
};

/// Row index for the given per-field codes (MSB field first).
std::uint64_t pack_row(std::span<const std::uint32_t> field_codes, int field_bits);

/// Tables of one layer: `neurons` for sparse_linear, `depthwise` and
/// `pointwise` for sparse_conv.
struct LayerTables {
  LayerKind kind = LayerKind::SparseLinear;
  std::vector<TruthTable> neurons;
  std::vector<TruthTable> depthwise;
  std::vector<TruthTable> pointwise;

  friend bool operator==(const LayerTables&, const LayerTables&) = default;
};

/// One entry per model layer; dense_quant_linear layers have none.
struct ModelTables {
  std::vector<std::optional<LayerTables>> layers;
};

struct TableGenOptions {
  int limit = kDefaultTableGenLimit;  // maximum fan-in bits
  unsigned threads = 0;               // 0 picks hardware concurrency
};

/// Tabulates one neuron: decode -> dot product -> batch norm -> downstream
/// quantizer, for every input code.
TruthTable generate_neuron_table(std::span<const double> weights, const BatchNorm& bn, int feature,
                                 const QuantizerParams& input_q, const QuantizerParams& downstream,
                                 int limit = kDefaultTableGenLimit);

TruthTable generate_neuron_table(const SparseLinearLayer& layer, int neuron, const QuantizerParams& downstream,
                                 int limit = kDefaultTableGenLimit);

LayerTables generate_truth_table(const SparseLinearLayer& layer, const QuantizerParams& downstream,
                                 const TableGenOptions& opts = {});
LayerTables generate_truth_table(const SparseConvLayer& layer, const TableGenOptions& opts = {});

/// Largest fan-in bit count any table of the layer would need (0 for dense).
int table_input_bits(const Layer& layer);

/// Tables for every tabulable layer. Throws LimitExceeded if a sparse layer
/// is over the limit unless `skip_over_limit` is set, in which case that
/// layer is left without tables.
ModelTables generate_model_tables(const Model& model, const TableGenOptions& opts = {},
                                  bool skip_over_limit = false);

/// Runs one sparse_linear layer through its tables.
std::vector<std::uint32_t> table_forward_layer(const SparseLinearLayer& layer, const LayerTables& tables,
                                               std::span<const std::uint32_t> input_codes);

/// Slides every window of a convolution through its depthwise and pointwise
/// tables. Codes are channel-major like the float path.
std::vector<std::uint32_t> conv_table_forward(const SparseConvLayer& layer, const LayerTables& tables,
                                              std::span<const std::uint32_t> image_codes);

struct TableForwardOptions {
  /// Evaluate table-less dense_quant_linear layers from their codes instead
  /// of failing with MissingTable.
  bool dense_arithmetic = false;
};

/// Output codes of every layer for one input-code vector.
std::vector<std::vector<std::uint32_t>> table_forward_layers(const Model& model,
                                                             const std::vector<LayerGeometry>& geo,
                                                             const ModelTables& tables,
                                                             std::span<const std::uint32_t> input_codes,
                                                             const TableForwardOptions& opts = {});
std::vector<std::uint32_t> table_forward(const Model& model, const std::vector<LayerGeometry>& geo,
                                         const ModelTables& tables, std::span<const std::uint32_t> input_codes,
                                         const TableForwardOptions& opts = {});

/// Serialized layer tables: {"<neuron>": [[inputs...], [outputs...]], ...},
/// with "dw" and "pt" sub-objects for convolutions. Parsing needs the layer
/// to recover the field split of each row.
std::string tables_to_json(const LayerTables& tables);
LayerTables tables_from_json(const std::string& text, const Layer& layer);

}  // namespace lutnet
