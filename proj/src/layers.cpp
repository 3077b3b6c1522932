#include "lutnet/layers.hpp"

#include <algorithm>
#include <sstream>

namespace lutnet {

BatchNorm BatchNorm::identity(int features, double eps) {
  BatchNorm bn;
  bn.gamma = VectorXd::Ones(features);
  bn.beta = VectorXd::Zero(features);
  bn.running_mean = VectorXd::Zero(features);
  bn.running_var = VectorXd::Ones(features);
  bn.eps = VectorXd::Constant(features, eps);
  return bn;
}

void BatchNorm::validate(int features, const std::string& where) const {
  if (gamma.size() != features || beta.size() != features || running_mean.size() != features ||
      running_var.size() != features || eps.size() != features)
    throw Error(ErrorKind::InvariantViolation, where + ": batch-norm parameter count mismatch");
  for (int i = 0; i < features; ++i)
    if (!(running_var[i] + eps[i] > 0.0))
      throw Error(ErrorKind::InvariantViolation, where + ": batch-norm variance + eps must be positive");
  if (!gamma.allFinite() || !beta.allFinite() || !running_mean.allFinite() || !running_var.allFinite())
    throw Error(ErrorKind::InvariantViolation, where + ": non-finite batch-norm parameter");
}

double quantize_weight(double w, int bit_width, double max_weight) {
  const double top = static_cast<double>((1 << (bit_width - 1)) - 1);
  const double step = max_weight / top;
  const double level = std::clamp(std::round(w / step), -top, top);
  return level * step;
}

LayerKind kind_of(const Layer& layer) {
  switch (layer.index()) {
    case 0: return LayerKind::SparseLinear;
    case 1: return LayerKind::DenseQuantLinear;
    default: return LayerKind::SparseConv;
  }
}

const QuantizerParams& input_quantizer_of(const Layer& layer) {
  return std::visit([](const auto& l) -> const QuantizerParams& { return l.input_quantizer; }, layer);
}

const QuantizerParams& output_quantizer_of(const Layer& layer) {
  return std::visit([](const auto& l) -> const QuantizerParams& { return l.output_quantizer; }, layer);
}

namespace {

void check_width(Eigen::Index got, int expected, const char* what) {
  if (got != expected) {
    std::ostringstream os;
    os << what << ": input width " << got << " does not match layer input width " << expected;
    throw Error(ErrorKind::WidthMismatch, os.str());
  }
}

}  // namespace

VectorXd forward_sparse_linear(const SparseLinearLayer& layer, const QuantTensor& x) {
  check_width(x.values.size(), layer.input_width(), "sparse_linear");
  const QuantTensor q = quantize(x.values, layer.input_quantizer);
  VectorXd out(layer.neurons());
  std::vector<double> w, v;
  for (int n = 0; n < layer.neurons(); ++n) {
    const auto& row = layer.mask.rows[static_cast<std::size_t>(n)];
    w.resize(row.size());
    v.resize(row.size());
    for (std::size_t k = 0; k < row.size(); ++k) {
      w[k] = layer.weights(n, row[k]);
      v[k] = q.values[row[k]];
    }
    out[n] = kernels::neuron_response(w, v, layer.batchnorm, n);
  }
  return out;
}

VectorXd forward_dense_quant_linear(const DenseQuantLinearLayer& layer, const QuantTensor& x) {
  check_width(x.values.size(), layer.input_width(), "dense_quant_linear");
  const QuantTensor q = quantize(x.values, layer.input_quantizer);
  const std::vector<double> v(q.values.data(), q.values.data() + q.values.size());
  std::vector<double> w(v.size());
  VectorXd out(layer.neurons());
  for (int n = 0; n < layer.neurons(); ++n) {
    for (int j = 0; j < layer.input_width(); ++j) w[static_cast<std::size_t>(j)] = layer.weights(n, j);
    out[n] = kernels::neuron_response(w, v, layer.batchnorm, n);
  }
  return out;
}

VectorXd depthwise_preactivation(const SparseConvLayer& layer, const VectorXd& img) {
  const SpatialShape in = layer.input_shape;
  const SpatialShape out = layer.output_shape();
  const int k = layer.kernel_size;
  const int kernel_count = layer.depthwise_kernels();
  VectorXd dw(static_cast<Eigen::Index>(kernel_count) * out.height * out.width);
  std::vector<double> w, v;
  for (int d = 0; d < kernel_count; ++d) {
    const auto& row = layer.depthwise_mask.rows[static_cast<std::size_t>(d)];
    const int ch = layer.depthwise_channel(d);
    w.resize(row.size());
    v.resize(row.size());
    for (std::size_t t = 0; t < row.size(); ++t) w[t] = layer.depthwise_weights(d, row[t]);
    for (int oh = 0; oh < out.height; ++oh) {
      for (int ow = 0; ow < out.width; ++ow) {
        for (std::size_t t = 0; t < row.size(); ++t) {
          const int r = row[t] / k;
          const int c = row[t] % k;
          v[t] = img[(static_cast<Eigen::Index>(ch) * in.height + oh * layer.stride + r) * in.width +
                     ow * layer.stride + c];
        }
        dw[(static_cast<Eigen::Index>(d) * out.height + oh) * out.width + ow] =
            kernels::neuron_response(w, v, layer.depthwise_bn, d);
      }
    }
  }
  return dw;
}

QuantTensor forward_sparse_conv(const SparseConvLayer& layer, const QuantTensor& image, int height,
                                int width, int channels) {
  const SpatialShape in = layer.input_shape;
  if (height != in.height || width != in.width || channels != in.channels)
    throw Error(ErrorKind::WidthMismatch, "sparse_conv: image dimensions do not match the layer");
  check_width(image.values.size(), in.size(), "sparse_conv");
  const QuantTensor q = quantize(image.values, layer.input_quantizer);
  const VectorXd dw = depthwise_preactivation(layer, q.values);
  const QuantTensor mid = quantize(dw, layer.intermediate_quantizer);

  const SpatialShape out = layer.output_shape();
  const int pixels = out.height * out.width;
  VectorXd pt(static_cast<Eigen::Index>(layer.output_maps()) * pixels);
  std::vector<double> w, v;
  for (int o = 0; o < layer.output_maps(); ++o) {
    const auto& row = layer.pointwise_mask.rows[static_cast<std::size_t>(o)];
    w.resize(row.size());
    v.resize(row.size());
    for (std::size_t t = 0; t < row.size(); ++t) w[t] = layer.pointwise_weights(o, row[t]);
    for (int p = 0; p < pixels; ++p) {
      for (std::size_t t = 0; t < row.size(); ++t)
        v[t] = mid.values[static_cast<Eigen::Index>(row[t]) * pixels + p];
      pt[static_cast<Eigen::Index>(o) * pixels + p] = kernels::neuron_response(w, v, layer.pointwise_bn, o);
    }
  }
  return quantize(pt, layer.output_quantizer);
}

}  // namespace lutnet
