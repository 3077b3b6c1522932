#include "lutnet/tablegen.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "json_io.hpp"

namespace lutnet {

namespace {

/// Runs fn(i) for i in [0, n) on a small pool. Each result slot is written by
/// exactly one task, so the schedule never affects the output.
template <typename Fn>
void parallel_for(int n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max(n, 1)));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

void check_limit(int bits, int limit, const std::string& what) {
  if (bits > limit)
    throw Error(ErrorKind::LimitExceeded, what + " needs " + std::to_string(bits) +
                                              " fan-in bits, above the table limit of " + std::to_string(limit));
}

std::vector<double> masked_weights(const MatrixXd& w, const ConnectivityMask& mask, int n) {
  const auto& row = mask.rows[static_cast<std::size_t>(n)];
  std::vector<double> out(row.size());
  for (std::size_t k = 0; k < row.size(); ++k) out[k] = w(n, row[k]);
  return out;
}

std::uint32_t row_of(std::span<const std::uint32_t> codes, const std::vector<int>& row, int field_bits) {
  std::uint64_t r = 0;
  for (int idx : row) r = (r << field_bits) | codes[static_cast<std::size_t>(idx)];
  return static_cast<std::uint32_t>(r);
}

}  // namespace

std::vector<std::string> TruthTable::input_strings() const {
  std::vector<std::string> out;
  out.reserve(outputs.size());
  for (std::uint64_t r = 0; r < rows(); ++r) out.push_back(code_to_bits(r, input_bits()));
  return out;
}

std::vector<std::string> TruthTable::output_strings() const {
  std::vector<std::string> out;
  out.reserve(outputs.size());
  for (std::uint16_t c : outputs) out.push_back(code_to_bits(c, out_bits));
  return out;
}

std::uint64_t pack_row(std::span<const std::uint32_t> field_codes, int field_bits) {
  std::uint64_t r = 0;
  for (std::uint32_t c : field_codes) r = (r << field_bits) | c;
  return r;
}

TruthTable generate_neuron_table(std::span<const double> weights, const BatchNorm& bn, int feature,
                                 const QuantizerParams& input_q, const QuantizerParams& downstream, int limit) {
  TruthTable t;
  t.fields = static_cast<int>(weights.size());
  t.field_bits = input_q.bit_width;
  t.out_bits = downstream.bit_width;
  check_limit(t.input_bits(), limit, "neuron " + std::to_string(feature));
  t.outputs.resize(static_cast<std::size_t>(t.rows()));
  std::vector<double> levels(static_cast<std::size_t>(input_q.max_code()) + 1);
  for (std::uint32_t c = 0; c <= input_q.max_code(); ++c) levels[c] = value_of(c, input_q);
  const std::uint64_t field_mask = input_q.max_code();
  std::vector<double> v(weights.size());
  for (std::uint64_t r = 0; r < t.rows(); ++r) {
    for (int j = 0; j < t.fields; ++j)
      v[static_cast<std::size_t>(j)] = levels[(r >> ((t.fields - 1 - j) * t.field_bits)) & field_mask];
    const double y = kernels::neuron_response(weights, v, bn, feature);
    t.outputs[static_cast<std::size_t>(r)] = static_cast<std::uint16_t>(quantize_code(y, downstream));
  }
  return t;
}

TruthTable generate_neuron_table(const SparseLinearLayer& layer, int neuron, const QuantizerParams& downstream,
                                 int limit) {
  const auto w = masked_weights(layer.weights, layer.mask, neuron);
  return generate_neuron_table(w, layer.batchnorm, neuron, layer.input_quantizer, downstream, limit);
}

LayerTables generate_truth_table(const SparseLinearLayer& layer, const QuantizerParams& downstream,
                                 const TableGenOptions& opts) {
  LayerTables t;
  t.kind = LayerKind::SparseLinear;
  t.neurons.resize(static_cast<std::size_t>(layer.neurons()));
  for (int n = 0; n < layer.neurons(); ++n)
    check_limit(static_cast<int>(layer.mask.rows[static_cast<std::size_t>(n)].size()) *
                    layer.input_quantizer.bit_width,
                opts.limit, "sparse_linear neuron " + std::to_string(n));
  parallel_for(layer.neurons(), opts.threads, [&](int n) {
    t.neurons[static_cast<std::size_t>(n)] = generate_neuron_table(layer, n, downstream, opts.limit);
  });
  return t;
}

LayerTables generate_truth_table(const SparseConvLayer& layer, const TableGenOptions& opts) {
  LayerTables t;
  t.kind = LayerKind::SparseConv;
  const int dk = layer.depthwise_kernels();
  const int pk = layer.output_maps();
  t.depthwise.resize(static_cast<std::size_t>(dk));
  t.pointwise.resize(static_cast<std::size_t>(pk));
  parallel_for(dk + pk, opts.threads, [&](int i) {
    if (i < dk) {
      const auto w = masked_weights(layer.depthwise_weights, layer.depthwise_mask, i);
      t.depthwise[static_cast<std::size_t>(i)] = generate_neuron_table(
          w, layer.depthwise_bn, i, layer.input_quantizer, layer.intermediate_quantizer, opts.limit);
    } else {
      const int o = i - dk;
      const auto w = masked_weights(layer.pointwise_weights, layer.pointwise_mask, o);
      t.pointwise[static_cast<std::size_t>(o)] = generate_neuron_table(
          w, layer.pointwise_bn, o, layer.intermediate_quantizer, layer.output_quantizer, opts.limit);
    }
  });
  return t;
}

int table_input_bits(const Layer& layer) {
  if (const auto* l = std::get_if<SparseLinearLayer>(&layer)) {
    std::size_t f = 0;
    for (const auto& r : l->mask.rows) f = std::max(f, r.size());
    return static_cast<int>(f) * l->input_quantizer.bit_width;
  }
  if (const auto* c = std::get_if<SparseConvLayer>(&layer)) {
    std::size_t fk = 0, fs = 0;
    for (const auto& r : c->depthwise_mask.rows) fk = std::max(fk, r.size());
    for (const auto& r : c->pointwise_mask.rows) fs = std::max(fs, r.size());
    return std::max(static_cast<int>(fk) * c->input_quantizer.bit_width,
                    static_cast<int>(fs) * c->intermediate_quantizer.bit_width);
  }
  return 0;
}

ModelTables generate_model_tables(const Model& model, const TableGenOptions& opts, bool skip_over_limit) {
  ModelTables mt;
  mt.layers.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    if (std::holds_alternative<DenseQuantLinearLayer>(layer)) continue;
    if (table_input_bits(layer) > opts.limit) {
      if (skip_over_limit) continue;
      check_limit(table_input_bits(layer), opts.limit, "layer " + std::to_string(i));
    }
    if (const auto* l = std::get_if<SparseLinearLayer>(&layer))
      mt.layers[i] = generate_truth_table(*l, l->output_quantizer, opts);
    else
      mt.layers[i] = generate_truth_table(std::get<SparseConvLayer>(layer), opts);
  }
  return mt;
}

std::vector<std::uint32_t> table_forward_layer(const SparseLinearLayer& layer, const LayerTables& tables,
                                               std::span<const std::uint32_t> input_codes) {
  if (static_cast<int>(input_codes.size()) != layer.input_width())
    throw Error(ErrorKind::WidthMismatch, "table_forward: input width " + std::to_string(input_codes.size()) +
                                              " does not match layer input width " +
                                              std::to_string(layer.input_width()));
  if (static_cast<int>(tables.neurons.size()) != layer.neurons())
    throw Error(ErrorKind::MissingTable, "table_forward: table count differs from the neuron count");
  std::vector<std::uint32_t> out(static_cast<std::size_t>(layer.neurons()));
  const int b = layer.input_quantizer.bit_width;
  for (int n = 0; n < layer.neurons(); ++n)
    out[static_cast<std::size_t>(n)] =
        tables.neurons[static_cast<std::size_t>(n)].lookup(row_of(input_codes, layer.mask.rows[n], b));
  return out;
}

std::vector<std::uint32_t> conv_table_forward(const SparseConvLayer& layer, const LayerTables& tables,
                                              std::span<const std::uint32_t> image_codes) {
  const SpatialShape in = layer.input_shape;
  if (static_cast<int>(image_codes.size()) != in.size())
    throw Error(ErrorKind::WidthMismatch, "conv_table_forward: image size does not match the layer input shape");
  if (static_cast<int>(tables.depthwise.size()) != layer.depthwise_kernels() ||
      static_cast<int>(tables.pointwise.size()) != layer.output_maps())
    throw Error(ErrorKind::MissingTable, "conv_table_forward: table count differs from the layer");
  const int k = layer.kernel_size;
  const int rlen = 1 + (in.height - k) / layer.stride;
  const int clen = 1 + (in.width - k) / layer.stride;
  const int pixels = rlen * clen;
  const int dk = layer.depthwise_kernels();
  const int bi = layer.input_quantizer.bit_width;
  const int bm = layer.intermediate_quantizer.bit_width;
  std::vector<std::uint32_t> mid(static_cast<std::size_t>(dk) * pixels);
  std::vector<std::uint32_t> out(static_cast<std::size_t>(layer.output_maps()) * pixels);
  std::vector<std::uint32_t> window(static_cast<std::size_t>(k) * k);
  std::vector<std::uint32_t> taps(static_cast<std::size_t>(dk));
  for (int r = 0; r < rlen; ++r) {
    for (int c = 0; c < clen; ++c) {
      const int p = r * clen + c;
      for (int d = 0; d < dk; ++d) {
        const int ch = layer.depthwise_channel(d);
        for (int wr = 0; wr < k; ++wr)
          for (int wc = 0; wc < k; ++wc)
            window[static_cast<std::size_t>(wr * k + wc)] =
                image_codes[static_cast<std::size_t>((ch * in.height + r * layer.stride + wr) * in.width +
                                                     c * layer.stride + wc)];
        const std::uint32_t code = tables.depthwise[static_cast<std::size_t>(d)].lookup(
            row_of(window, layer.depthwise_mask.rows[static_cast<std::size_t>(d)], bi));
        mid[static_cast<std::size_t>(d) * pixels + p] = code;
        taps[static_cast<std::size_t>(d)] = code;
      }
      for (int o = 0; o < layer.output_maps(); ++o)
        out[static_cast<std::size_t>(o) * pixels + p] = tables.pointwise[static_cast<std::size_t>(o)].lookup(
            row_of(taps, layer.pointwise_mask.rows[static_cast<std::size_t>(o)], bm));
    }
  }
  return out;
}

std::vector<std::vector<std::uint32_t>> table_forward_layers(const Model& model,
                                                             const std::vector<LayerGeometry>& geo,
                                                             const ModelTables& tables,
                                                             std::span<const std::uint32_t> input_codes,
                                                             const TableForwardOptions& opts) {
  if (static_cast<int>(input_codes.size()) != model.topology.input_features)
    throw Error(ErrorKind::WidthMismatch, "table_forward: input width does not match the model");
  if (tables.layers.size() != model.layers.size())
    throw Error(ErrorKind::MissingTable, "table_forward: table set does not cover the model");
  std::vector<std::vector<std::uint32_t>> outputs;
  outputs.reserve(model.layers.size());
  std::vector<std::uint32_t> x;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    x.clear();
    for (int src : geo[i].sources) {
      if (src < 0)
        x.insert(x.end(), input_codes.begin(), input_codes.end());
      else
        x.insert(x.end(), outputs[static_cast<std::size_t>(src)].begin(), outputs[static_cast<std::size_t>(src)].end());
    }
    const Layer& layer = model.layers[i];
    if (const auto* d = std::get_if<DenseQuantLinearLayer>(&layer)) {
      if (!opts.dense_arithmetic)
        throw Error(ErrorKind::MissingTable, "layer " + std::to_string(i) + " (dense_quant_linear) has no tables");
      QuantTensor t;
      t.values = decode(x, d->input_quantizer);
      const VectorXd pre = forward_dense_quant_linear(*d, t);
      std::vector<std::uint32_t> codes(static_cast<std::size_t>(pre.size()));
      for (Eigen::Index n = 0; n < pre.size(); ++n)
        codes[static_cast<std::size_t>(n)] = quantize_code(pre[n], d->output_quantizer);
      outputs.push_back(std::move(codes));
      continue;
    }
    if (!tables.layers[i]) throw Error(ErrorKind::MissingTable, "layer " + std::to_string(i) + " has no tables");
    if (const auto* l = std::get_if<SparseLinearLayer>(&layer))
      outputs.push_back(table_forward_layer(*l, *tables.layers[i], x));
    else
      outputs.push_back(conv_table_forward(std::get<SparseConvLayer>(layer), *tables.layers[i], x));
  }
  return outputs;
}

std::vector<std::uint32_t> table_forward(const Model& model, const std::vector<LayerGeometry>& geo,
                                         const ModelTables& tables, std::span<const std::uint32_t> input_codes,
                                         const TableForwardOptions& opts) {
  return table_forward_layers(model, geo, tables, input_codes, opts).back();
}

namespace {

detail::Json neuron_map(const std::vector<TruthTable>& tables) {
  detail::Json j = detail::Json::object();
  for (std::size_t n = 0; n < tables.size(); ++n)
    j[std::to_string(n)] = detail::Json::array({tables[n].input_strings(), tables[n].output_strings()});
  return j;
}

std::vector<TruthTable> neuron_map_from(const detail::Json& j, int field_bits, const std::string& what) {
  if (!j.is_object()) throw Error(ErrorKind::Parse, what + ": expected an object keyed by neuron id");
  std::vector<TruthTable> out(j.size());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [key, value] : j.items()) {
    std::size_t n = 0;
    try {
      std::size_t used = 0;
      n = std::stoul(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Parse, what + ": bad neuron id '" + key + "'");
    }
    if (n >= out.size() || seen[n]) throw Error(ErrorKind::Parse, what + ": neuron ids must be 0..n-1, once each");
    seen[n] = true;
    if (!value.is_array() || value.size() != 2)
      throw Error(ErrorKind::Parse, what + ": neuron " + key + " must be [inputs, outputs]");
    const auto ins = value[0].get<std::vector<std::string>>();
    const auto outs = value[1].get<std::vector<std::string>>();
    if (ins.empty() || ins.size() != outs.size())
      throw Error(ErrorKind::Parse, what + ": neuron " + key + " input/output lists differ in length");
    TruthTable& t = out[n];
    const int bits = static_cast<int>(ins[0].size());
    if (field_bits <= 0 || bits % field_bits != 0)
      throw Error(ErrorKind::Parse, what + ": row width not a multiple of the field width");
    t.field_bits = field_bits;
    t.fields = bits / field_bits;
    t.out_bits = static_cast<int>(outs[0].size());
    if (bits > 32 || ins.size() != t.rows()) throw Error(ErrorKind::Parse, what + ": table is not exhaustive");
    t.outputs.resize(ins.size());
    for (std::size_t r = 0; r < ins.size(); ++r) {
      if (ins[r].size() != static_cast<std::size_t>(bits) || bits_to_code(ins[r]) != r ||
          outs[r].size() != static_cast<std::size_t>(t.out_bits))
        throw Error(ErrorKind::Parse, what + ": neuron " + key + " row " + std::to_string(r) + " malformed");
      t.outputs[r] = static_cast<std::uint16_t>(bits_to_code(outs[r]));
    }
  }
  return out;
}

}  // namespace

std::string tables_to_json(const LayerTables& tables) {
  detail::Json j;
  if (tables.kind == LayerKind::SparseConv) {
    j["dw"] = neuron_map(tables.depthwise);
    j["pt"] = neuron_map(tables.pointwise);
  } else {
    j = neuron_map(tables.neurons);
  }
  return j.dump() + "\n";
}

LayerTables tables_from_json(const std::string& text, const Layer& layer) try {
  const detail::Json j = detail::parse_json(text, "truth tables");
  LayerTables t;
  t.kind = kind_of(layer);
  if (const auto* c = std::get_if<SparseConvLayer>(&layer)) {
    if (!j.contains("dw") || !j.contains("pt")) throw Error(ErrorKind::Parse, "truth tables: missing 'dw' or 'pt'");
    t.depthwise = neuron_map_from(j.at("dw"), c->input_quantizer.bit_width, "truth tables dw");
    t.pointwise = neuron_map_from(j.at("pt"), c->intermediate_quantizer.bit_width, "truth tables pt");
  } else if (const auto* l = std::get_if<SparseLinearLayer>(&layer)) {
    t.neurons = neuron_map_from(j, l->input_quantizer.bit_width, "truth tables");
  } else {
    throw Error(ErrorKind::UnsupportedLayer, "dense_quant_linear layers have no truth tables");
  }
  return t;
} catch (const nlohmann::json::exception& e) {
  throw Error(ErrorKind::Parse, std::string("truth tables: ") + e.what());
}

}  // namespace lutnet
