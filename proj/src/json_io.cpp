#include "json_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace lutnet::detail {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorKind::InvalidSpec, msg); }

template <typename T>
T field(const Json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) bad(where + ": missing key '" + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    bad(where + ": key '" + key + "' has the wrong type");
  }
}

template <typename T>
T field_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return field<T>(j, key, where);
}

}  // namespace

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) bad(where + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) bad(where + ": unknown key '" + key + "'");
}

Json topology_to_json(const TopologySpec& spec) {
  Json j;
  j["input_features"] = spec.input_features;
  j["input_bit_width"] = spec.input_bit_width;
  j["seed"] = spec.seed;
  if (spec.input_shape)
    j["input_shape"] = {{"height", spec.input_shape->height},
                        {"width", spec.input_shape->width},
                        {"channels", spec.input_shape->channels}};
  j["table_gen_limit"] = spec.table_gen_limit;
  Json layers = Json::array();
  for (const LayerSpec& l : spec.layers) {
    Json o;
    o["kind"] = to_string(l.kind);
    o["neurons"] = l.neurons;
    if (l.kind == LayerKind::SparseLinear) o["fan_in"] = l.fan_in;
    o["in_bit_width"] = l.in_bit_width;
    o["out_bit_width"] = l.out_bit_width;
    o["max_val_in"] = l.max_val_in;
    o["max_val_out"] = l.max_val_out;
    if (l.kind == LayerKind::SparseConv) {
      o["kernel_size"] = l.kernel_size;
      o["stride"] = l.stride;
      o["kernel_fan_in"] = l.kernel_fan_in;
      o["pointwise_fan_in"] = l.pointwise_fan_in;
      o["intermediate_bit_width"] = l.intermediate_bit_width;
      o["max_val_intermediate"] = l.max_val_intermediate;
      o["first_layer"] = l.first_layer;
    }
    if (l.kind == LayerKind::DenseQuantLinear) {
      o["weight_bit_width"] = l.weight_bit_width;
      o["max_weight"] = l.max_weight;
    }
    layers.push_back(std::move(o));
  }
  j["layers"] = std::move(layers);
  Json links = Json::array();
  for (const SkipLink& s : spec.skip_links) links.push_back(Json::array({s.source, s.destination}));
  j["skip_links"] = std::move(links);
  return j;
}

TopologySpec topology_from_json(const Json& j) {
  reject_unknown(j, {"input_features", "input_bit_width", "seed", "layers", "skip_links", "input_shape",
                     "table_gen_limit", "training", "name", "comment"},
                 "topology");
  TopologySpec spec;
  spec.input_features = field<int>(j, "input_features", "topology");
  spec.input_bit_width = field_or<int>(j, "input_bit_width", 1, "topology");
  spec.seed = field_or<std::uint64_t>(j, "seed", 0, "topology");
  spec.table_gen_limit = field_or<int>(j, "table_gen_limit", kDefaultTableGenLimit, "topology");
  if (j.contains("input_shape") && !j.at("input_shape").is_null()) {
    const Json& s = j.at("input_shape");
    reject_unknown(s, {"height", "width", "channels"}, "input_shape");
    spec.input_shape = SpatialShape{field<int>(s, "height", "input_shape"), field<int>(s, "width", "input_shape"),
                                    field_or<int>(s, "channels", 1, "input_shape")};
  }
  const auto it = j.find("layers");
  if (it == j.end() || !it->is_array()) bad("topology: 'layers' must be an array");
  int prev_bits = spec.input_bit_width;
  double prev_max = 1.0;
  for (std::size_t i = 0; i < it->size(); ++i) {
    const Json& o = (*it)[i];
    const std::string where = "layer " + std::to_string(i);
    reject_unknown(o, {"kind", "neurons", "fan_in", "in_bit_width", "out_bit_width", "max_val_in", "max_val_out",
                       "kernel_size", "stride", "kernel_fan_in", "pointwise_fan_in", "intermediate_bit_width",
                       "max_val_intermediate", "first_layer", "weight_bit_width", "max_weight"},
                   where);
    LayerSpec l;
    l.kind = layer_kind_from_string(field<std::string>(o, "kind", where));
    l.neurons = field<int>(o, "neurons", where);
    l.in_bit_width = field_or<int>(o, "in_bit_width", prev_bits, where);
    l.max_val_in = field_or<double>(o, "max_val_in", prev_max, where);
    l.out_bit_width = field<int>(o, "out_bit_width", where);
    l.max_val_out = field_or<double>(o, "max_val_out", 1.0, where);
    switch (l.kind) {
      case LayerKind::SparseLinear:
        l.fan_in = field<int>(o, "fan_in", where);
        break;
      case LayerKind::SparseConv:
        l.kernel_size = field<int>(o, "kernel_size", where);
        l.stride = field_or<int>(o, "stride", 1, where);
        l.kernel_fan_in = field<int>(o, "kernel_fan_in", where);
        l.pointwise_fan_in = field<int>(o, "pointwise_fan_in", where);
        l.intermediate_bit_width = field_or<int>(o, "intermediate_bit_width", l.out_bit_width, where);
        l.max_val_intermediate = field_or<double>(o, "max_val_intermediate", l.max_val_out, where);
        l.first_layer = field_or<bool>(o, "first_layer", i == 0, where);
        break;
      case LayerKind::DenseQuantLinear:
        l.weight_bit_width = field<int>(o, "weight_bit_width", where);
        l.max_weight = field_or<double>(o, "max_weight", 1.0, where);
        break;
    }
    prev_bits = l.out_bit_width;
    prev_max = l.max_val_out;
    spec.layers.push_back(l);
  }
  if (j.contains("skip_links")) {
    const Json& links = j.at("skip_links");
    if (!links.is_array()) bad("topology: 'skip_links' must be an array");
    for (const Json& s : links) {
      if (s.is_array() && s.size() == 2 && s[0].is_number_integer() && s[1].is_number_integer())
        spec.skip_links.push_back({s[0].get<int>(), s[1].get<int>()});
      else if (s.is_object())
        spec.skip_links.push_back({field<int>(s, "source", "skip link"), field<int>(s, "destination", "skip link")});
      else
        bad("topology: skip link must be [source, destination] or {source, destination}");
    }
  }
  return spec;
}

Json matrix_to_json(const MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) bad(what + ": expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) bad(what + ": ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) bad(what + ": non-numeric entry");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

Json vector_to_json(const VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

VectorXd vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) bad(what + ": expected an array");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) bad(what + ": non-numeric entry");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Parse, what + ": " + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << contents;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace lutnet::detail
