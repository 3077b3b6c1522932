#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "lutnet/training.hpp"
#include "support.hpp"

using namespace lutnet;
using lutnet::testing::linear_spec;

namespace {

Dataset blobs(int samples, int features, int classes, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.features.resize(samples, features);
  d.labels.resize(static_cast<std::size_t>(samples));
  d.classes = classes;
  for (int s = 0; s < samples; ++s) {
    const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    d.labels[static_cast<std::size_t>(s)] = c;
    for (int f = 0; f < features; ++f) d.features(s, f) = (f % classes == c ? 0.8 : 0.2) + 0.1 * rng.normal();
  }
  return d;
}

using lutnet::testing::ten_parameter;
using lutnet::testing::ten_parameter_model;

double analytic(const Model& m, const std::vector<LayerGradients>& g, int k) {
  const auto& l = std::get<SparseLinearLayer>(m.layers[0]);
  if (k < 6) {
    const int n = k / 3;
    return g[0].weights(n, l.mask.rows[static_cast<std::size_t>(n)][static_cast<std::size_t>(k % 3)]);
  }
  return k < 8 ? g[0].gamma[k - 6] : g[0].beta[k - 8];
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("enum names round trip") {
  for (auto k : {OptimizerKind::Adam, OptimizerKind::Sgd}) CHECK(optimizer_from_string(to_string(k)) == k);
  for (auto s : {SparsityStrategy::Apriori, SparsityStrategy::Iterative, SparsityStrategy::Momentum})
    CHECK(strategy_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(optimizer_from_string("rmsprop"), Error);
  CHECK_THROWS_AS(strategy_from_string("lottery"), Error);
}

TEST_CASE("straight-through gradients match central differences") {
  Model m = ten_parameter_model();
  // Inputs on the 3-bit grid of [0, 1]; targets away from the clamp edges.
  MatrixXd x(5, 4);
  x << 1, 2, 3, 4, 5, 1, 0, 2, 7, 7, 1, 3, 2, 6, 5, 0, 4, 3, 6, 1;
  x /= 7.0;
  MatrixXd t(5, 2);
  t << 1.0, 2.5, 2.0, 1.5, 3.0, 2.0, 1.2, 2.8, 2.2, 1.0;
  const BatchTargets targets{nullptr, &t};
  ForwardMode mode;
  mode.surrogate = true;
  mode.loss = LossKind::SquaredError;

  // beta near 2 with gamma near 1 keeps batch-normalized outputs well inside
  // the [0, 4] clamp, where the surrogate is differentiable.
  std::vector<LayerGradients> grads;
  loss_and_gradients(m, x, targets, mode, &grads);
  const double h = 1e-6;
  for (int k = 0; k < 10; ++k) {
    CAPTURE(k);
    Model plus = m, minus = m;
    ten_parameter(plus, k) += h;
    ten_parameter(minus, k) -= h;
    const double fd = (loss_and_gradients(plus, x, targets, mode, nullptr) -
                       loss_and_gradients(minus, x, targets, mode, nullptr)) /
                      (2 * h);
    const double a = analytic(m, grads, k);
    CHECK(std::fabs(a - fd) <= 1e-4 * std::max({std::fabs(a), std::fabs(fd), 1e-3}));
  }
}

TEST_CASE("gradients are finite-difference exact in inference-statistics mode too") {
  Model m = ten_parameter_model();
  auto& l = std::get<SparseLinearLayer>(m.layers[0]);
  l.batchnorm.running_mean << 0.3, -0.2;
  l.batchnorm.running_var << 0.8, 1.4;
  MatrixXd x(3, 4);
  x << 1, 2, 3, 4, 5, 1, 0, 2, 7, 6, 1, 3;
  x /= 7.0;
  MatrixXd t(3, 2);
  t << 1.0, 2.5, 2.0, 1.5, 3.0, 2.0;
  ForwardMode mode;
  mode.surrogate = true;
  mode.freeze_batchnorm = true;
  mode.loss = LossKind::SquaredError;
  const BatchTargets targets{nullptr, &t};
  std::vector<LayerGradients> grads;
  loss_and_gradients(m, x, targets, mode, &grads);
  for (int k = 0; k < 6; ++k) {
    Model plus = m, minus = m;
    ten_parameter(plus, k) += 1e-6;
    ten_parameter(minus, k) -= 1e-6;
    const double fd = (loss_and_gradients(plus, x, targets, mode, nullptr) -
                       loss_and_gradients(minus, x, targets, mode, nullptr)) / 2e-6;
    CHECK(std::fabs(analytic(m, grads, k) - fd) <= 1e-4 * std::max(std::fabs(fd), 1e-3));
  }
}

TEST_CASE("cross-entropy in evaluation mode equals the reference forward") {
  Rng rng(6);
  Model m = build_model(linear_spec(6, 2, {{5, 3, 2}, {3, 4, 3, 3.0}}, 4));
  lutnet::testing::randomize_batchnorm(m, rng);
  MatrixXd x(8, 6);
  for (auto& v : x.reshaped()) v = rng.uniform(0.0, 1.0);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 2, 1};
  ForwardMode mode;
  mode.training = false;
  const double loss = loss_and_gradients(m, x, BatchTargets{&labels, nullptr}, mode, nullptr);
  double want = 0.0;
  for (int s = 0; s < 8; ++s) {
    const VectorXd y = forward(m, x.row(s).transpose()).values;
    const double mx = y.maxCoeff();
    double z = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) z += std::exp(y[i] - mx);
    want += -(y[labels[static_cast<std::size_t>(s)]] - mx - std::log(z));
  }
  CHECK(loss == doctest::Approx(want / 8.0).epsilon(1e-12));
}

TEST_CASE("regression learns y = 2x") {
  // One neuron of fan-in one with a fine output grid.
  Model m = build_model(linear_spec(1, 8, {{1, 1, 8, 4.0}}, 2));
  // A negative start would sit in the dead zone of the ReLU quantizer.
  std::get<SparseLinearLayer>(m.layers[0]).weights(0, 0) = 0.5;
  Dataset d;
  Rng rng(3);
  d.features.resize(64, 1);
  d.targets.resize(64, 1);
  for (int s = 0; s < 64; ++s) {
    d.features(s, 0) = quantize_value(rng.uniform(0.0, 1.0), {8, 1.0});
    d.targets(s, 0) = 2.0 * d.features(s, 0);
  }
  TrainOptions opts;
  opts.loss = LossKind::SquaredError;
  opts.freeze_batchnorm = true;
  opts.max_steps = 200;
  opts.epochs = 1000;
  opts.batch_size = 16;
  opts.optimizer.lr = 0.05;
  const auto r = train(m, d, opts);
  const auto& l = std::get<SparseLinearLayer>(r.model.layers[0]);
  const double effective = l.weights(0, 0) / std::sqrt(1.0 + l.batchnorm.eps[0]);
  CHECK(std::fabs(effective - 2.0) < 0.05);
  CHECK(r.metrics.size() == 50);  // four steps per epoch
}

TEST_CASE("training is deterministic in its seeds") {
  const Dataset data = blobs(200, 8, 4, 1);
  const Model m = build_model(linear_spec(8, 2, {{10, 3, 2, 2.0}, {4, 4, 3, 2.0}}, 5));
  TrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 25;
  opts.seed = 9;
  const auto a = train(m, data, opts);
  const auto b = train(m, data, opts);
  CHECK(serialize_model(a.model) == serialize_model(b.model));
  CHECK(metrics_csv(a.metrics) == metrics_csv(b.metrics));
  opts.seed = 10;
  CHECK(serialize_model(train(m, data, opts).model) != serialize_model(a.model));
}

TEST_CASE("a-priori training separates easy blobs") {
  Dataset data = blobs(600, 12, 3, 2);
  const Dataset test = blobs(300, 12, 3, 3);
  const Model m = build_model(linear_spec(12, 2, {{24, 4, 2, 2.0}, {3, 6, 4, 4.0}}, 6));
  TrainOptions opts;
  opts.epochs = 8;
  opts.batch_size = 32;
  opts.seed = 1;
  int calls = 0;
  opts.on_epoch = [&](const EpochMetrics& e) { CHECK(e.epoch == ++calls); };
  const auto r = train(m, data, opts, &test);
  CHECK(calls == 8);
  REQUIRE(r.metrics.back().test_accuracy.has_value());
  CHECK(*r.metrics.back().test_accuracy > 0.9);
  CHECK(evaluate_accuracy(r.model, test) == *r.metrics.back().test_accuracy);
  // A-priori masks never move.
  CHECK(std::get<SparseLinearLayer>(r.model.layers[0]).mask == std::get<SparseLinearLayer>(m.layers[0]).mask);
}

TEST_CASE("SGD updates only masked positions too") {
  const Dataset data = blobs(100, 6, 2, 4);
  const Model m = build_model(linear_spec(6, 1, {{4, 2, 1}, {2, 3, 2, 2.0}}, 7));
  TrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 10;
  opts.optimizer.kind = OptimizerKind::Sgd;
  opts.optimizer.lr = 0.05;
  const auto r = train(m, data, opts);
  validate(r.model);
  CHECK(std::get<SparseLinearLayer>(r.model.layers[0]).weights != std::get<SparseLinearLayer>(m.layers[0]).weights);
}

TEST_CASE("divergence is reported as a training error") {
  const Dataset data = blobs(100, 6, 2, 5);
  const Model m = build_model(linear_spec(6, 2, {{4, 3, 2, 2.0}, {2, 4, 3, 2.0}}, 8));
  TrainOptions opts;
  opts.epochs = 5;
  opts.batch_size = 10;
  opts.optimizer.kind = OptimizerKind::Sgd;
  opts.optimizer.lr = std::numeric_limits<double>::infinity();
  try {
    train(m, data, opts);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Training);
    CHECK(std::string(e.what()).find("learning rate") != std::string::npos);
  }
}

TEST_CASE("metrics CSV layout") {
  std::vector<EpochMetrics> ms(2);
  ms[0].epoch = 1;
  ms[0].loss = 0.5;
  ms[0].train_accuracy = 0.75;
  ms[0].fan_in = {3, 3.0, 3};
  ms[1].epoch = 2;
  ms[1].test_accuracy = 0.25;
  const std::string csv = metrics_csv(ms);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,loss,train_accuracy,test_accuracy,fan_in_min,fan_in_mean,fan_in_max");
  std::getline(in, line);
  CHECK(line == "1,0.5,0.75,,3,3,3");
  std::getline(in, line);
  CHECK(line.find("0.25") != std::string::npos);
}

}
