#include "lutnet/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "json_io.hpp"
#include "lutnet/costmodel.hpp"
#include "lutnet/data.hpp"
#include "lutnet/model.hpp"
#include "lutnet/netlist.hpp"
#include "lutnet/tablegen.hpp"
#include "lutnet/training.hpp"

namespace lutnet::cli {

namespace fs = std::filesystem;
using detail::Json;

namespace {

struct RunConfig {
  std::string config;
  std::string model;
  std::string data_dir;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int samples = 1000;
  std::string style = "comb";
  bool json = false;
  bool verbose = false;

  // train
  int epochs = -1;
  int batch_size = -1;
  double lr = -1.0;
  std::string optimizer;
  std::string strategy;
  std::string label_column = "label";
};

/// Reads the optional "training" object of a topology file; command-line
/// flags override it.
TrainOptions training_options(const std::string& config_text, const RunConfig& rc, std::uint64_t topo_seed) {
  TrainOptions opts;
  opts.seed = topo_seed;
  const Json doc = detail::parse_json(config_text, "config");
  if (doc.contains("training")) {
    const Json& t = doc.at("training");
    if (!t.is_object()) throw Error(ErrorKind::InvalidSpec, "\"training\" must be an object");
    detail::reject_unknown(t, {"epochs", "batch_size", "lr", "optimizer", "strategy", "prune_rate", "steps_between",
                               "p1", "r1", "alpha", "events", "seed", "beta1", "beta2", "momentum"},
                           "training");
    opts.epochs = t.value("epochs", opts.epochs);
    opts.batch_size = t.value("batch_size", opts.batch_size);
    opts.seed = t.value("seed", opts.seed);
    auto& o = opts.optimizer;
    o.lr = t.value("lr", o.lr);
    o.beta1 = t.value("beta1", o.beta1);
    o.beta2 = t.value("beta2", o.beta2);
    o.momentum = t.value("momentum", o.momentum);
    if (t.contains("optimizer")) o.kind = optimizer_from_string(t.at("optimizer").get<std::string>());
    auto& s = opts.schedule;
    if (t.contains("strategy")) s.strategy = strategy_from_string(t.at("strategy").get<std::string>());
    s.prune_rate = t.value("prune_rate", s.prune_rate);
    s.steps_between = t.value("steps_between", s.steps_between);
    s.p1 = t.value("p1", s.p1);
    s.r1 = t.value("r1", s.r1);
    s.alpha = t.value("alpha", s.alpha);
    s.events = t.value("events", s.events);
  }
  if (rc.epochs > 0) opts.epochs = rc.epochs;
  if (rc.batch_size > 0) opts.batch_size = rc.batch_size;
  if (rc.lr > 0.0) opts.optimizer.lr = rc.lr;
  if (!rc.optimizer.empty()) opts.optimizer.kind = optimizer_from_string(rc.optimizer);
  if (!rc.strategy.empty()) opts.schedule.strategy = strategy_from_string(rc.strategy);
  if (rc.seed_given) opts.seed = rc.seed;
  return opts;
}

/// --model loads a trained model; --config builds the seeded initial model.
Model model_from_args(const RunConfig& rc) {
  if (!rc.model.empty()) return load_model(rc.model);
  TopologySpec spec = load_topology(rc.config);
  if (rc.seed_given) spec.seed = rc.seed;
  return build_model(spec);
}

int cmd_cost(const RunConfig& rc, std::ostream& out) {
  const TopologySpec spec = rc.model.empty() ? load_topology(rc.config) : load_model(rc.model).topology;
  const LutCostReport r = report(spec);
  out << (rc.json ? format_json(r) : format_text(r));
  return kOk;
}

int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  std::string config_text;
  Model model;
  if (!rc.model.empty()) {
    model = load_model(rc.model);
    config_text = "{}";
  } else {
    config_text = detail::read_file(rc.config);
    TopologySpec spec = parse_topology(config_text);
    if (rc.seed_given) spec.seed = rc.seed;
    model = build_model(spec);
  }
  TrainOptions opts = training_options(config_text, rc, model.topology.seed);

  DataSplits data = load_data_dir(rc.data_dir, rc.label_column);
  const int outputs = model.geometry().back().output_width;
  if (data.train.classes > outputs)
    throw Error(ErrorKind::WidthMismatch, "data has " + std::to_string(data.train.classes) +
                                              " classes but the model has " + std::to_string(outputs) + " outputs");
  data.train = fit_to_quantizer(std::move(data.train), model.input_quantizer());
  data.test = fit_to_quantizer(std::move(data.test), model.input_quantizer());

  opts.on_epoch = [&](const EpochMetrics& m) {
    if (!rc.verbose) return;
    err << "epoch " << m.epoch << " loss " << m.loss << " train " << m.train_accuracy;
    if (m.test_accuracy) err << " test " << *m.test_accuracy;
    err << '\n';
  };
  const TrainResult result = train(std::move(model), data.train, opts, &data.test);

  const fs::path dir = rc.out.empty() ? fs::path(".") : fs::path(rc.out);
  save_model(result.model, dir / "model.json");
  detail::write_file(dir / "metrics.csv", metrics_csv(result.metrics));

  const EpochMetrics& last = result.metrics.back();
  if (rc.json) {
    Json j;
    j["model"] = (dir / "model.json").string();
    j["metrics"] = (dir / "metrics.csv").string();
    j["epochs"] = last.epoch;
    j["loss"] = last.loss;
    j["train_accuracy"] = last.train_accuracy;
    if (last.test_accuracy) j["test_accuracy"] = *last.test_accuracy;
    out << j.dump(2) << '\n';
  } else {
    out << "wrote " << (dir / "model.json").string() << " and " << (dir / "metrics.csv").string() << '\n';
    out << "final loss " << last.loss << ", train accuracy " << last.train_accuracy;
    if (last.test_accuracy) out << ", test accuracy " << *last.test_accuracy;
    out << '\n';
  }
  return kOk;
}

TableGenOptions table_options(const Model& model) {
  TableGenOptions o;
  o.limit = model.topology.table_gen_limit;
  return o;
}

int cmd_tables(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const Model model = model_from_args(rc);
  const ModelTables tables = generate_model_tables(model, table_options(model), true);
  const fs::path dir = rc.out.empty() ? fs::path(".") : fs::path(rc.out);
  Json summary = Json::array();
  for (std::size_t i = 0; i < tables.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    Json entry;
    entry["layer"] = i;
    entry["kind"] = to_string(kind_of(layer));
    if (!tables.layers[i]) {
      if (kind_of(layer) != LayerKind::DenseQuantLinear)
        err << "warning: layer " << i << " needs " << table_input_bits(layer)
            << " fan-in bits, above the table limit of " << model.topology.table_gen_limit << "; skipped\n";
      entry["file"] = nullptr;
    } else {
      const fs::path file = dir / ("layer" + std::to_string(i) + ".json");
      detail::write_file(file, tables_to_json(*tables.layers[i]));
      entry["file"] = file.string();
    }
    summary.push_back(entry);
  }
  if (rc.json)
    out << summary.dump(2) << '\n';
  else
    for (const auto& e : summary)
      out << "layer " << e["layer"].get<std::size_t>() << " (" << e["kind"].get<std::string>() << "): "
          << (e["file"].is_null() ? std::string("no tables") : e["file"].get<std::string>()) << '\n';
  return kOk;
}

int cmd_emit(const RunConfig& rc, std::ostream& out) {
  const Model model = model_from_args(rc);
  const NetlistStyle style = netlist_style_from_string(rc.style);
  const ModelTables tables = generate_model_tables(model, table_options(model));
  const NetlistIR ir = build_netlist(model, tables, style);
  const auto files = emit_verilog(ir);
  const fs::path dir = rc.out.empty() ? fs::path(".") : fs::path(rc.out);
  write_verilog(files, dir);
  if (rc.json) {
    Json j;
    j["style"] = to_string(style);
    j["latency"] = ir.latency();
    j["files"] = Json::array();
    for (const auto& f : files) j["files"].push_back((dir / f.name).string());
    out << j.dump(2) << '\n';
  } else {
    out << "wrote " << files.size() << " files to " << dir.string() << " (" << to_string(style) << ", latency "
        << ir.latency() << ")\n";
  }
  return kOk;
}

bool all_sparse_linear(const Model& model) {
  for (const Layer& l : model.layers)
    if (kind_of(l) != LayerKind::SparseLinear) return false;
  return true;
}

int cmd_verify(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const Model model = model_from_args(rc);
  const auto geo = model.geometry();
  const QuantizerParams& in_q = model.input_quantizer();
  const int out_bits = model.output_quantizer().bit_width;

  ModelTables tables;
  try {
    tables = generate_model_tables(model, table_options(model), false);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::LimitExceeded) throw;
    err << "cannot verify: " << e.what() << '\n';
    return kInvalidInput;
  }
  const bool netlist = all_sparse_linear(model);
  NetlistIR comb, piped;
  if (netlist) {
    comb = build_netlist(model, tables, NetlistStyle::Combinational);
    piped = build_netlist(model, tables, NetlistStyle::Pipelined);
  }
  TableForwardOptions tfo;
  tfo.dense_arithmetic = true;

  Rng rng = Rng::derive(rc.seed, {0x7e51f1});
  std::vector<std::uint32_t> codes(static_cast<std::size_t>(model.topology.input_features));
  for (int s = 0; s < rc.samples; ++s) {
    for (auto& c : codes) c = static_cast<std::uint32_t>(rng.below(std::uint64_t{in_q.max_code()} + 1));
    const auto reference = forward_codes(model, geo, codes);
    const auto via_tables = table_forward(model, geo, tables, codes, tfo);
    std::string failed;
    if (via_tables != reference) failed = "table_forward";
    if (failed.empty() && netlist) {
      const BitVector in = pack_codes(codes, in_q.bit_width);
      const BitVector expect = pack_codes(reference, out_bits);
      if (simulate(comb, in) != expect)
        failed = "combinational netlist";
      else if (simulate_pipelined(piped, in) != expect)
        failed = "pipelined netlist";
    }
    if (!failed.empty()) {
      err << "mismatch (" << failed << ") at sample " << s << "\n";
      err << "input bits: " << pack_codes(codes, in_q.bit_width).to_string() << '\n';
      if (rc.json) {
        Json j;
        j["ok"] = false;
        j["check"] = failed;
        j["sample"] = s;
        j["input_bits"] = pack_codes(codes, in_q.bit_width).to_string();
        out << j.dump(2) << '\n';
      }
      return kMismatch;
    }
  }
  const char* mode = netlist ? "float == tables == netlist" : "float == tables";
  if (rc.json) {
    Json j;
    j["ok"] = true;
    j["check"] = mode;
    j["samples"] = rc.samples;
    out << j.dump(2) << '\n';
  } else {
    out << "ok: " << rc.samples << " samples, " << mode << '\n';
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fixed fan-in quantized networks to LUT netlists"};
  app.require_subcommand(1);
  RunConfig rc;

  auto add_seed = [&](CLI::App* c) {
    c->add_option("--seed", rc.seed, "Random seed")->each([&](const std::string&) { rc.seed_given = true; });
  };
  auto add_model_input = [&](CLI::App* c) {
    auto* g = c->add_option_group("input");
    g->add_option("--model", rc.model, "Model JSON")->check(CLI::ExistingFile);
    g->add_option("--config", rc.config, "Topology JSON (untrained, seeded model)")->check(CLI::ExistingFile);
    g->require_option(1);
  };
  auto add_json = [&](CLI::App* c) { c->add_flag("--json", rc.json, "Machine-readable output"); };

  auto* cost = app.add_subcommand("cost", "Print the analytical LUT cost of a topology or model");
  auto* cost_in = cost->add_option_group("input");
  cost_in->add_option("--config", rc.config, "Topology JSON")->check(CLI::ExistingFile);
  cost_in->add_option("--model", rc.model, "Model JSON")->check(CLI::ExistingFile);
  cost_in->require_option(1);
  add_json(cost);

  auto* tr = app.add_subcommand("train", "Train a model and write model.json and metrics.csv");
  auto* tr_in = tr->add_option_group("input");
  tr_in->add_option("--config", rc.config, "Topology JSON with an optional \"training\" object")
      ->check(CLI::ExistingFile);
  tr_in->add_option("--model", rc.model, "Model JSON to continue training")->check(CLI::ExistingFile);
  tr_in->require_option(1);
  tr->add_option("--data-dir", rc.data_dir, "MNIST IDX files or train.csv/test.csv")
      ->required()
      ->check(CLI::ExistingDirectory);
  tr->add_option("--out", rc.out, "Output directory");
  add_seed(tr);
  tr->add_option("--epochs", rc.epochs)->check(CLI::PositiveNumber);
  tr->add_option("--batch-size", rc.batch_size)->check(CLI::PositiveNumber);
  tr->add_option("--lr", rc.lr)->check(CLI::PositiveNumber);
  tr->add_option("--optimizer", rc.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
  tr->add_option("--strategy", rc.strategy)->check(CLI::IsMember({"apriori", "iterative", "momentum"}));
  tr->add_option("--label-column", rc.label_column, "CSV label column");
  tr->add_flag("--verbose", rc.verbose, "Print per-epoch metrics");
  add_json(tr);

  auto* tables = app.add_subcommand("tables", "Write one truth-table JSON file per layer");
  add_model_input(tables);
  add_seed(tables);
  tables->add_option("--out", rc.out, "Output directory");
  add_json(tables);

  auto* emit = app.add_subcommand("emit", "Write Verilog sources and files.f");
  add_model_input(emit);
  add_seed(emit);
  emit->add_option("--style", rc.style)->check(CLI::IsMember({"comb", "combinational", "pipelined"}));
  emit->add_option("--out", rc.out, "Output directory");
  add_json(emit);

  auto* verify = app.add_subcommand("verify", "Check float, table and netlist inference agree bit for bit");
  add_model_input(verify);
  verify->add_option("--samples", rc.samples)->check(CLI::PositiveNumber);
  add_seed(verify);
  add_json(verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (cost->parsed()) return cmd_cost(rc, out);
    if (tr->parsed()) return cmd_train(rc, out, err);
    if (tables->parsed()) return cmd_tables(rc, out, err);
    if (emit->parsed()) return cmd_emit(rc, out);
    if (verify->parsed()) return cmd_verify(rc, out, err);
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return kInvalidInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInvalidInput;
  }
  return kUsage;
}

int run(int argc, char** argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace lutnet::cli
