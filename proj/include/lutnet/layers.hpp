#pragma once

#include <cmath>
#include <span>
#include <variant>

#include "lutnet/common.hpp"
#include "lutnet/quantizer.hpp"
#include "lutnet/topology.hpp"

namespace lutnet {

struct BatchNorm {
  VectorXd gamma;
  VectorXd beta;
  VectorXd running_mean;
  VectorXd running_var;
  VectorXd eps;

  static BatchNorm identity(int features, double eps = 1e-5);
  int size() const noexcept { return static_cast<int>(gamma.size()); }
  /// Inference-mode normalization with the running statistics.
  double apply(int feature, double x) const {
    return gamma[feature] * (x - running_mean[feature]) /
               std::sqrt(running_var[feature] + eps[feature]) +
           beta[feature];
  }
  void validate(int features, const std::string& where) const;

  friend bool operator==(const BatchNorm&, const BatchNorm&) = default;
};

/// Fixed fan-in linear layer: input quantizer -> masked matmul -> batch norm.
struct SparseLinearLayer {
  ConnectivityMask mask;
  MatrixXd weights;  // neurons x input width, exactly zero off-mask
  BatchNorm batchnorm;
  QuantizerParams input_quantizer;
  QuantizerParams output_quantizer;  // the downstream quantizer

  int neurons() const noexcept { return static_cast<int>(weights.rows()); }
  int input_width() const noexcept { return static_cast<int>(weights.cols()); }
};

/// Dense layer whose weights live on a symmetric signed grid of
/// weight_bit_width bits with step max_weight / (2^(b-1) - 1).
struct DenseQuantLinearLayer {
  MatrixXd weights;  // neurons x input width, on the weight grid
  BatchNorm batchnorm;
  QuantizerParams input_quantizer;
  QuantizerParams output_quantizer;
  int weight_bit_width = 4;
  double max_weight = 1.0;

  int neurons() const noexcept { return static_cast<int>(weights.rows()); }
  int input_width() const noexcept { return static_cast<int>(weights.cols()); }
  double weight_step() const noexcept {
    return max_weight / static_cast<double>((1 << (weight_bit_width - 1)) - 1);
  }
};

double quantize_weight(double w, int bit_width, double max_weight);

/// Sparse depthwise-separable convolution. Depthwise kernel d reads input
/// channel `depthwise_channel(d)`; masks index the row-major k*k window.
struct SparseConvLayer {
  int kernel_size = 1;
  int stride = 1;
  bool first_layer = false;
  SpatialShape input_shape;

  ConnectivityMask depthwise_mask;  // kernels x k*k
  MatrixXd depthwise_weights;       // kernels x k*k, zero off-mask
  BatchNorm depthwise_bn;
  QuantizerParams intermediate_quantizer;

  ConnectivityMask pointwise_mask;  // output maps x kernels
  MatrixXd pointwise_weights;       // output maps x kernels, zero off-mask
  BatchNorm pointwise_bn;

  QuantizerParams input_quantizer;
  QuantizerParams output_quantizer;

  int depthwise_kernels() const noexcept { return static_cast<int>(depthwise_weights.rows()); }
  int output_maps() const noexcept { return static_cast<int>(pointwise_weights.rows()); }
  int depthwise_channel(int kernel) const noexcept {
    return input_shape.channels == 1 ? 0 : kernel % input_shape.channels;
  }
  SpatialShape output_shape() const {
    return {1 + (input_shape.height - kernel_size) / stride,
            1 + (input_shape.width - kernel_size) / stride, output_maps()};
  }
};

using Layer = std::variant<SparseLinearLayer, DenseQuantLinearLayer, SparseConvLayer>;

LayerKind kind_of(const Layer& layer);
const QuantizerParams& input_quantizer_of(const Layer& layer);
const QuantizerParams& output_quantizer_of(const Layer& layer);

namespace kernels {

/// Accumulates w[k] * x[k] in index order, then applies batch norm. Both the
/// float forward and the table generator call this, so their results agree
/// to the last bit.
inline double neuron_response(std::span<const double> weights, std::span<const double> inputs,
                              const BatchNorm& bn, int feature) {
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) acc += weights[k] * inputs[k];
  return bn.apply(feature, acc);
}

}  // namespace kernels

/// Pre-activations (batch-norm outputs) of a sparse linear layer; the caller
/// applies the downstream quantizer.
VectorXd forward_sparse_linear(const SparseLinearLayer& layer, const QuantTensor& x);
VectorXd forward_dense_quant_linear(const DenseQuantLinearLayer& layer, const QuantTensor& x);
/// `image` is channel-major (C x H x W flattened). Returns the output
/// quantized feature maps in the same layout.
QuantTensor forward_sparse_conv(const SparseConvLayer& layer, const QuantTensor& image, int height,
                                int width, int channels);

/// Depthwise stage only, before the intermediate quantizer. Output is
/// kernels x H' x W', channel-major.
VectorXd depthwise_preactivation(const SparseConvLayer& layer, const VectorXd& quantized_image);

}  // namespace lutnet
