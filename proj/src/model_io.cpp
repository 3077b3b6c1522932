#include <string>

#include "json_io.hpp"
#include "lutnet/model.hpp"

namespace lutnet {

namespace {

using detail::Json;

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorKind::InvalidSpec, msg); }

const Json& at(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) bad(where + ": missing key '" + key + "'");
  return j.at(key);
}

Json quantizer_json(const QuantizerParams& q) { return {{"bit_width", q.bit_width}, {"max_val", q.max_val}}; }

QuantizerParams quantizer_from(const Json& j, const std::string& where) {
  const Json& b = at(j, "bit_width", where);
  const Json& m = at(j, "max_val", where);
  if (!b.is_number_integer() || !m.is_number()) bad(where + ": malformed quantizer");
  return {b.get<int>(), m.get<double>()};
}

Json mask_json(const ConnectivityMask& m) {
  Json rows = Json::array();
  for (const auto& r : m.rows) rows.push_back(r);
  return rows;
}

ConnectivityMask mask_from(const Json& j, int input_width, const std::string& where) {
  if (!j.is_array()) bad(where + ": mask must be an array of index lists");
  ConnectivityMask m;
  m.input_width = input_width;
  for (const Json& row : j) {
    if (!row.is_array()) bad(where + ": mask row must be an array");
    std::vector<int> r;
    for (const Json& v : row) {
      if (!v.is_number_integer()) bad(where + ": mask index must be an integer");
      r.push_back(v.get<int>());
    }
    m.rows.push_back(std::move(r));
  }
  return m;
}

Json bn_json(const BatchNorm& bn) {
  return {{"gamma", detail::vector_to_json(bn.gamma)},
          {"beta", detail::vector_to_json(bn.beta)},
          {"running_mean", detail::vector_to_json(bn.running_mean)},
          {"running_var", detail::vector_to_json(bn.running_var)},
          {"eps", detail::vector_to_json(bn.eps)}};
}

BatchNorm bn_from(const Json& j, const std::string& where) {
  BatchNorm bn;
  bn.gamma = detail::vector_from_json(at(j, "gamma", where), where + " gamma");
  bn.beta = detail::vector_from_json(at(j, "beta", where), where + " beta");
  bn.running_mean = detail::vector_from_json(at(j, "running_mean", where), where + " running_mean");
  bn.running_var = detail::vector_from_json(at(j, "running_var", where), where + " running_var");
  bn.eps = detail::vector_from_json(at(j, "eps", where), where + " eps");
  return bn;
}

Json layer_json(const Layer& layer) {
  Json o;
  o["kind"] = to_string(kind_of(layer));
  if (const auto* l = std::get_if<SparseLinearLayer>(&layer)) {
    o["weights"] = detail::matrix_to_json(l->weights);
    o["mask"] = mask_json(l->mask);
    o["batchnorm"] = bn_json(l->batchnorm);
    o["quantizer"] = {{"input", quantizer_json(l->input_quantizer)},
                      {"output", quantizer_json(l->output_quantizer)}};
  } else if (const auto* d = std::get_if<DenseQuantLinearLayer>(&layer)) {
    o["weights"] = detail::matrix_to_json(d->weights);
    o["mask"] = nullptr;
    o["batchnorm"] = bn_json(d->batchnorm);
    o["quantizer"] = {{"input", quantizer_json(d->input_quantizer)},
                      {"output", quantizer_json(d->output_quantizer)},
                      {"weight", {{"bit_width", d->weight_bit_width}, {"max_val", d->max_weight}}}};
  } else {
    const auto& c = std::get<SparseConvLayer>(layer);
    o["weights"] = {{"depthwise", detail::matrix_to_json(c.depthwise_weights)},
                    {"pointwise", detail::matrix_to_json(c.pointwise_weights)}};
    o["mask"] = {{"depthwise", mask_json(c.depthwise_mask)}, {"pointwise", mask_json(c.pointwise_mask)}};
    o["batchnorm"] = {{"depthwise", bn_json(c.depthwise_bn)}, {"pointwise", bn_json(c.pointwise_bn)}};
    o["quantizer"] = {{"input", quantizer_json(c.input_quantizer)},
                      {"intermediate", quantizer_json(c.intermediate_quantizer)},
                      {"output", quantizer_json(c.output_quantizer)}};
  }
  return o;
}

Layer layer_from(const Json& o, const LayerSpec& ls, const LayerGeometry& g, std::size_t index) {
  const std::string where = "layer " + std::to_string(index);
  const LayerKind kind = layer_kind_from_string(at(o, "kind", where).get<std::string>());
  if (kind != ls.kind) throw Error(ErrorKind::InvariantViolation, where + ": layer kind differs from the topology");
  const Json& q = at(o, "quantizer", where);
  switch (kind) {
    case LayerKind::SparseLinear: {
      SparseLinearLayer l;
      l.weights = detail::matrix_from_json(at(o, "weights", where), where + " weights");
      l.mask = mask_from(at(o, "mask", where), g.input_width, where);
      l.batchnorm = bn_from(at(o, "batchnorm", where), where + " batchnorm");
      l.input_quantizer = quantizer_from(at(q, "input", where), where);
      l.output_quantizer = quantizer_from(at(q, "output", where), where);
      return l;
    }
    case LayerKind::DenseQuantLinear: {
      DenseQuantLinearLayer l;
      l.weights = detail::matrix_from_json(at(o, "weights", where), where + " weights");
      l.batchnorm = bn_from(at(o, "batchnorm", where), where + " batchnorm");
      l.input_quantizer = quantizer_from(at(q, "input", where), where);
      l.output_quantizer = quantizer_from(at(q, "output", where), where);
      const QuantizerParams w = quantizer_from(at(q, "weight", where), where);
      l.weight_bit_width = w.bit_width;
      l.max_weight = w.max_val;
      return l;
    }
    case LayerKind::SparseConv: {
      SparseConvLayer l;
      l.kernel_size = ls.kernel_size;
      l.stride = ls.stride;
      l.first_layer = ls.first_layer;
      l.input_shape = *g.input_shape;
      const Json& w = at(o, "weights", where);
      const Json& m = at(o, "mask", where);
      const Json& bn = at(o, "batchnorm", where);
      l.depthwise_weights = detail::matrix_from_json(at(w, "depthwise", where), where + " depthwise weights");
      l.pointwise_weights = detail::matrix_from_json(at(w, "pointwise", where), where + " pointwise weights");
      l.depthwise_mask = mask_from(at(m, "depthwise", where), ls.kernel_size * ls.kernel_size, where);
      l.pointwise_mask = mask_from(at(m, "pointwise", where), g.depthwise_kernels, where);
      l.depthwise_bn = bn_from(at(bn, "depthwise", where), where + " depthwise batchnorm");
      l.pointwise_bn = bn_from(at(bn, "pointwise", where), where + " pointwise batchnorm");
      l.input_quantizer = quantizer_from(at(q, "input", where), where);
      l.intermediate_quantizer = quantizer_from(at(q, "intermediate", where), where);
      l.output_quantizer = quantizer_from(at(q, "output", where), where);
      return l;
    }
  }
  bad(where + ": unknown layer kind");
}

}  // namespace

std::string serialize_model(const Model& model) {
  validate(model);
  Json j;
  j["version"] = kModelFormatVersion;
  j["topology"] = detail::topology_to_json(model.topology);
  Json layers = Json::array();
  for (const Layer& l : model.layers) layers.push_back(layer_json(l));
  j["layers"] = std::move(layers);
  return j.dump(1) + "\n";
}

Model deserialize_model(const std::string& text) try {
  const Json j = detail::parse_json(text, "model file");
  if (!j.is_object() || !j.contains("version") || !j.at("version").is_string())
    throw Error(ErrorKind::Parse, "model file: missing version tag");
  const std::string version = j.at("version").get<std::string>();
  if (version != kModelFormatVersion)
    throw Error(ErrorKind::VersionMismatch,
                "model file version '" + version + "' (expected '" + kModelFormatVersion + "')");
  Model model;
  model.topology = detail::topology_from_json(at(j, "topology", "model file"));
  const auto geo = resolve_geometry(model.topology);
  const Json& layers = at(j, "layers", "model file");
  if (!layers.is_array() || layers.size() != model.topology.layers.size())
    throw Error(ErrorKind::InvariantViolation, "model file: layer count differs from the topology");
  for (std::size_t i = 0; i < layers.size(); ++i)
    model.layers.push_back(layer_from(layers[i], model.topology.layers[i], geo[i], i));
  validate(model);
  return model;
} catch (const nlohmann::json::exception& e) {
  throw Error(ErrorKind::Parse, std::string("model file: ") + e.what());
}

void save_model(const Model& model, const std::filesystem::path& path) {
  detail::write_file(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) { return deserialize_model(detail::read_file(path)); }

}  // namespace lutnet
