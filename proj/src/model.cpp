#include "lutnet/model.hpp"

#include <cmath>
#include <sstream>

namespace lutnet {

namespace {

void fill_masked_normal(MatrixXd& w, const ConnectivityMask& mask, Rng& rng) {
  const double scale = std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(1, mask.rows.empty() ? 1 : mask.rows[0].size())));
  w = MatrixXd::Zero(mask.neurons(), mask.input_width);
  for (int n = 0; n < mask.neurons(); ++n)
    for (int j : mask.rows[static_cast<std::size_t>(n)]) w(n, j) = scale * rng.normal();
}

std::string where(std::size_t i) { return "layer " + std::to_string(i); }

void require(bool ok, std::size_t layer, const std::string& msg) {
  if (!ok) throw Error(ErrorKind::InvariantViolation, where(layer) + ": " + msg);
}

void check_off_mask_zero(const MatrixXd& w, const ConnectivityMask& mask, std::size_t layer,
                         const char* what) {
  for (int n = 0; n < mask.neurons(); ++n) {
    const auto& row = mask.rows[static_cast<std::size_t>(n)];
    std::size_t k = 0;
    for (int j = 0; j < w.cols(); ++j) {
      if (k < row.size() && row[k] == j) {
        ++k;
        continue;
      }
      if (w(n, j) != 0.0) {
        std::ostringstream os;
        os << what << " weight (" << n << ", " << j << ") is nonzero outside the mask";
        throw Error(ErrorKind::InvariantViolation, where(layer) + ": " + os.str());
      }
    }
  }
}

}  // namespace

Model build_model(const TopologySpec& spec) {
  const auto geo = resolve_geometry(spec);
  auto masks = init_random_masks(spec, spec.seed);
  Model model;
  model.topology = spec;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    Rng rng = Rng::derive(spec.seed, {0x77e16a7ULL, i});
    switch (ls.kind) {
      case LayerKind::SparseLinear: {
        SparseLinearLayer l;
        l.mask = std::move(masks[i].mask);
        fill_masked_normal(l.weights, l.mask, rng);
        l.batchnorm = BatchNorm::identity(ls.neurons);
        l.input_quantizer = ls.input_quantizer();
        l.output_quantizer = ls.output_quantizer();
        model.layers.emplace_back(std::move(l));
        break;
      }
      case LayerKind::DenseQuantLinear: {
        DenseQuantLinearLayer l;
        l.weight_bit_width = ls.weight_bit_width;
        l.max_weight = ls.max_weight;
        l.weights.resize(ls.neurons, geo[i].input_width);
        for (Eigen::Index c = 0; c < l.weights.cols(); ++c)
          for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
            l.weights(r, c) = quantize_weight(rng.uniform(-ls.max_weight, ls.max_weight),
                                              ls.weight_bit_width, ls.max_weight);
        l.batchnorm = BatchNorm::identity(ls.neurons);
        l.input_quantizer = ls.input_quantizer();
        l.output_quantizer = ls.output_quantizer();
        model.layers.emplace_back(std::move(l));
        break;
      }
      case LayerKind::SparseConv: {
        SparseConvLayer l;
        l.kernel_size = ls.kernel_size;
        l.stride = ls.stride;
        l.first_layer = ls.first_layer;
        l.input_shape = *geo[i].input_shape;
        l.depthwise_mask = std::move(masks[i].mask);
        fill_masked_normal(l.depthwise_weights, l.depthwise_mask, rng);
        l.depthwise_bn = BatchNorm::identity(geo[i].depthwise_kernels);
        l.intermediate_quantizer = ls.intermediate_quantizer();
        l.pointwise_mask = std::move(masks[i].pointwise);
        fill_masked_normal(l.pointwise_weights, l.pointwise_mask, rng);
        l.pointwise_bn = BatchNorm::identity(ls.neurons);
        l.input_quantizer = ls.input_quantizer();
        l.output_quantizer = ls.output_quantizer();
        model.layers.emplace_back(std::move(l));
        break;
      }
    }
  }
  return model;
}

void validate(const Model& model) {
  const auto geo = resolve_geometry(model.topology);
  if (model.layers.size() != model.topology.layers.size())
    throw Error(ErrorKind::InvariantViolation, "layer count differs from the topology");
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& ls = model.topology.layers[i];
    const LayerGeometry& g = geo[i];
    require(kind_of(model.layers[i]) == ls.kind, i, "layer kind differs from the topology");
    require(input_quantizer_of(model.layers[i]) == ls.input_quantizer(), i,
            "input quantizer differs from the topology");
    require(output_quantizer_of(model.layers[i]) == ls.output_quantizer(), i,
            "output quantizer differs from the topology");
    if (const auto* l = std::get_if<SparseLinearLayer>(&model.layers[i])) {
      require(l->weights.rows() == ls.neurons && l->weights.cols() == g.input_width, i,
              "weight matrix shape mismatch");
      require(l->mask.neurons() == ls.neurons && l->mask.input_width == g.input_width, i,
              "mask shape mismatch");
      l->mask.validate(ls.fan_in, where(i));
      check_off_mask_zero(l->weights, l->mask, i, "sparse_linear");
      require(l->weights.allFinite(), i, "non-finite weight");
      l->batchnorm.validate(ls.neurons, where(i));
    } else if (const auto* d = std::get_if<DenseQuantLinearLayer>(&model.layers[i])) {
      require(d->weights.rows() == ls.neurons && d->weights.cols() == g.input_width, i,
              "weight matrix shape mismatch");
      require(d->weight_bit_width == ls.weight_bit_width && d->max_weight == ls.max_weight, i,
              "weight quantizer differs from the topology");
      for (Eigen::Index c = 0; c < d->weights.cols(); ++c)
        for (Eigen::Index r = 0; r < d->weights.rows(); ++r) {
          const double w = d->weights(r, c);
          require(std::isfinite(w) && quantize_weight(w, d->weight_bit_width, d->max_weight) == w, i,
                  "dense weight is not on the weight grid");
        }
      d->batchnorm.validate(ls.neurons, where(i));
    } else {
      const auto& c = std::get<SparseConvLayer>(model.layers[i]);
      const int kk = ls.kernel_size * ls.kernel_size;
      require(c.kernel_size == ls.kernel_size && c.stride == ls.stride && c.first_layer == ls.first_layer,
              i, "convolution geometry differs from the topology");
      require(c.input_shape == *g.input_shape, i, "convolution input shape mismatch");
      require(c.depthwise_weights.rows() == g.depthwise_kernels && c.depthwise_weights.cols() == kk, i,
              "depthwise weight shape mismatch");
      require(c.depthwise_mask.neurons() == g.depthwise_kernels && c.depthwise_mask.input_width == kk, i,
              "depthwise mask shape mismatch");
      require(c.pointwise_weights.rows() == ls.neurons && c.pointwise_weights.cols() == g.depthwise_kernels,
              i, "pointwise weight shape mismatch");
      require(c.pointwise_mask.neurons() == ls.neurons && c.pointwise_mask.input_width == g.depthwise_kernels,
              i, "pointwise mask shape mismatch");
      require(c.intermediate_quantizer == ls.intermediate_quantizer(), i,
              "intermediate quantizer differs from the topology");
      c.depthwise_mask.validate(ls.kernel_fan_in, where(i) + " depthwise");
      c.pointwise_mask.validate(ls.pointwise_fan_in, where(i) + " pointwise");
      check_off_mask_zero(c.depthwise_weights, c.depthwise_mask, i, "depthwise");
      check_off_mask_zero(c.pointwise_weights, c.pointwise_mask, i, "pointwise");
      c.depthwise_bn.validate(g.depthwise_kernels, where(i) + " depthwise");
      c.pointwise_bn.validate(ls.neurons, where(i) + " pointwise");
    }
  }
}

VectorXd gather_input(const LayerGeometry& g, const VectorXd& primary,
                      const std::vector<QuantTensor>& outputs) {
  if (g.sources.size() == 1) return g.sources[0] < 0 ? primary : outputs[static_cast<std::size_t>(g.sources[0])].values;
  VectorXd x(g.input_width);
  Eigen::Index at = 0;
  for (int src : g.sources) {
    const VectorXd& part = src < 0 ? primary : outputs[static_cast<std::size_t>(src)].values;
    x.segment(at, part.size()) = part;
    at += part.size();
  }
  return x;
}

std::vector<QuantTensor> forward_layers(const Model& model, const std::vector<LayerGeometry>& geo,
                                        const VectorXd& features) {
  if (features.size() != model.topology.input_features)
    throw Error(ErrorKind::WidthMismatch, "feature vector width " + std::to_string(features.size()) +
                                              " does not match model input " +
                                              std::to_string(model.topology.input_features));
  std::vector<QuantTensor> outputs;
  outputs.reserve(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    QuantTensor x;
    x.values = gather_input(geo[i], features, outputs);
    const QuantizerParams& in_q = input_quantizer_of(model.layers[i]);
    x.scale = in_q.step();
    x.bit_width = in_q.bit_width;
    if (const auto* l = std::get_if<SparseLinearLayer>(&model.layers[i])) {
      outputs.push_back(quantize(forward_sparse_linear(*l, x), l->output_quantizer));
    } else if (const auto* d = std::get_if<DenseQuantLinearLayer>(&model.layers[i])) {
      outputs.push_back(quantize(forward_dense_quant_linear(*d, x), d->output_quantizer));
    } else {
      const auto& c = std::get<SparseConvLayer>(model.layers[i]);
      outputs.push_back(forward_sparse_conv(c, x, c.input_shape.height, c.input_shape.width,
                                            c.input_shape.channels));
    }
  }
  return outputs;
}

QuantTensor forward(const Model& model, const VectorXd& features) {
  return forward_layers(model, model.geometry(), features).back();
}

std::vector<std::uint32_t> encode(const VectorXd& values, const QuantizerParams& p) {
  std::vector<std::uint32_t> codes(static_cast<std::size_t>(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i) codes[static_cast<std::size_t>(i)] = code_of(values[i], p);
  return codes;
}

VectorXd decode(std::span<const std::uint32_t> codes, const QuantizerParams& p) {
  VectorXd v(static_cast<Eigen::Index>(codes.size()));
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] > p.max_code()) throw Error(ErrorKind::InvalidSpec, "input code out of range");
    v[static_cast<Eigen::Index>(i)] = value_of(codes[i], p);
  }
  return v;
}

std::vector<std::uint32_t> forward_codes(const Model& model, const std::vector<LayerGeometry>& geo,
                                         std::span<const std::uint32_t> input_codes) {
  const VectorXd x = decode(input_codes, model.input_quantizer());
  const auto outputs = forward_layers(model, geo, x);
  return encode(outputs.back().values, model.output_quantizer());
}

int argmax(const VectorXd& values) {
  int best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = static_cast<int>(i);
  return best;
}

int predict(const Model& model, const std::vector<LayerGeometry>& geo, const VectorXd& features) {
  return argmax(forward_layers(model, geo, features).back().values);
}

}  // namespace lutnet
