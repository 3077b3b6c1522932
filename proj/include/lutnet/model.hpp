#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lutnet/layers.hpp"
#include "lutnet/topology.hpp"

namespace lutnet {

inline constexpr const char* kModelFormatVersion = "lutnet-model/1";

/// A topology plus the trained parameters of every layer.
struct Model {
  TopologySpec topology;
  std::vector<Layer> layers;

  std::vector<LayerGeometry> geometry() const { return resolve_geometry(topology); }
  const QuantizerParams& input_quantizer() const { return input_quantizer_of(layers.front()); }
  const QuantizerParams& output_quantizer() const { return output_quantizer_of(layers.back()); }
};

/// Fresh model: random masks from topology.seed, He-style random weights,
/// identity batch norm.
Model build_model(const TopologySpec& spec);

/// Checks every ModelFile invariant (fan-in, zero off-mask weights, weight
/// grid, parameter shapes, consistency with the topology).
void validate(const Model& model);

/// Concatenates the producers listed in `g.sources` into one layer input.
VectorXd gather_input(const LayerGeometry& g, const VectorXd& primary,
                      const std::vector<QuantTensor>& outputs);

/// Reference float path: quantized output of every layer for one sample.
std::vector<QuantTensor> forward_layers(const Model& model, const std::vector<LayerGeometry>& geo,
                                        const VectorXd& features);
QuantTensor forward(const Model& model, const VectorXd& features);

std::vector<std::uint32_t> encode(const VectorXd& values, const QuantizerParams& p);
VectorXd decode(std::span<const std::uint32_t> codes, const QuantizerParams& p);

/// Float forward on the quantized-input domain: decodes input codes with the
/// first layer's input quantizer and encodes the final outputs.
std::vector<std::uint32_t> forward_codes(const Model& model, const std::vector<LayerGeometry>& geo,
                                         std::span<const std::uint32_t> input_codes);

/// Index of the largest output (lowest index wins ties).
int argmax(const VectorXd& values);
int predict(const Model& model, const std::vector<LayerGeometry>& geo, const VectorXd& features);

std::string serialize_model(const Model& model);
Model deserialize_model(const std::string& text);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace lutnet
