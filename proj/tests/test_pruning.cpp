#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "lutnet/training.hpp"
#include "support.hpp"

using namespace lutnet;
using lutnet::testing::linear_spec;

namespace {

struct Expected {
  std::vector<int> pruned, regrown, row;
};

// Brute-force oracle: rank (key, index) pairs explicitly.
Expected oracle_step(const std::vector<int>& row, const MatrixXd& w, const MatrixXd& m, int n, int p1, int r1) {
  std::vector<std::pair<double, int>> on;
  for (int j : row) on.push_back({std::fabs(w(n, j)), j});
  std::sort(on.begin(), on.end());
  Expected e;
  for (int k = 0; k < p1; ++k) e.pruned.push_back(on[static_cast<std::size_t>(k)].second);
  std::vector<std::pair<double, int>> off;
  for (int j = 0; j < m.cols(); ++j)
    if (std::find(row.begin(), row.end(), j) == row.end()) off.push_back({-std::fabs(m(n, j)), j});
  std::sort(off.begin(), off.end());
  for (int k = 0; k < r1; ++k) e.regrown.push_back(off[static_cast<std::size_t>(k)].second);
  std::sort(e.pruned.begin(), e.pruned.end());
  std::sort(e.regrown.begin(), e.regrown.end());
  for (int j : row)
    if (std::find(e.pruned.begin(), e.pruned.end(), j) == e.pruned.end()) e.row.push_back(j);
  e.row.insert(e.row.end(), e.regrown.begin(), e.regrown.end());
  std::sort(e.row.begin(), e.row.end());
  return e;
}

void require_off_mask_zero(const Model& m) {
  for (const Layer& layer : m.layers) {
    const auto* l = std::get_if<SparseLinearLayer>(&layer);
    if (!l) continue;
    for (int n = 0; n < l->neurons(); ++n)
      for (int j = 0; j < l->input_width(); ++j)
        if (!l->mask.contains(n, j)) REQUIRE(l->weights(n, j) == 0.0);
  }
}

Dataset blobs(int samples, int features, int classes, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.features.resize(samples, features);
  d.labels.resize(static_cast<std::size_t>(samples));
  d.classes = classes;
  for (int s = 0; s < samples; ++s) {
    const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    d.labels[static_cast<std::size_t>(s)] = c;
    for (int f = 0; f < features; ++f) d.features(s, f) = (f % classes == c ? 0.8 : 0.2) + 0.15 * rng.normal();
  }
  return d;
}

}  // namespace

TEST_SUITE("pruning") {

TEST_CASE("momentum is an exponential moving average") {
  Model m = build_model(linear_spec(5, 1, {{3, 2, 1}}));
  MomentumState s = make_momentum_state(m, 0.9);
  std::vector<MatrixXd> g = {MatrixXd::Constant(3, 5, 2.0)};
  accumulate_momentum(s, g);
  CHECK(s.momentum[0](1, 1) == doctest::Approx(0.2));
  accumulate_momentum(s, g);
  CHECK(s.momentum[0](1, 1) == doctest::Approx(0.9 * 0.2 + 0.2));
  update_momentum_statistics(s, m);
  CHECK(s.nonzero[0] == 6);
  CHECK(s.total_nonzero == 6);
  CHECK(s.mean_momentum[0] == doctest::Approx(0.38));
  CHECK(s.total_momentum == doctest::Approx(0.38));
}

TEST_CASE("prune step matches a brute-force ranking") {
  Rng rng(31);
  for (int t = 0; t < 100; ++t) {
    const int inputs = 6 + static_cast<int>(rng.below(10));
    const int fan_in = 2 + static_cast<int>(rng.below(4));
    Model m = build_model(linear_spec(inputs, 2, {{5, fan_in, 2}}, rng.next_u64()));
    auto& l = std::get<SparseLinearLayer>(m.layers[0]);
    // Coarse values so ties are common and the index tie-break matters.
    for (int n = 0; n < 5; ++n)
      for (int j : l.mask.rows[static_cast<std::size_t>(n)]) l.weights(n, j) = std::round(rng.uniform(-3, 3)) / 2;
    MomentumState s = make_momentum_state(m, 0.5);
    for (int n = 0; n < 5; ++n)
      for (int j = 0; j < inputs; ++j) s.momentum[0](n, j) = std::round(rng.uniform(-3, 3));
    const int p = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(fan_in, inputs - fan_in))));

    const Model before = m;
    const auto& lb = std::get<SparseLinearLayer>(before.layers[0]);
    const auto events = momentum_prune_step(m, s, p, p);
    REQUIRE(events.size() == 5);
    for (int n = 0; n < 5; ++n) {
      const auto e = oracle_step(lb.mask.rows[static_cast<std::size_t>(n)], lb.weights, s.momentum[0], n, p, p);
      REQUIRE(events[static_cast<std::size_t>(n)].pruned == e.pruned);
      REQUIRE(events[static_cast<std::size_t>(n)].regrown == e.regrown);
      REQUIRE(l.mask.rows[static_cast<std::size_t>(n)] == e.row);
      for (int j : e.regrown) REQUIRE(l.weights(n, j) == 0.0);
    }
    require_off_mask_zero(m);
  }
}

TEST_CASE("repeated prune steps keep the fan-in fixed") {
  Rng rng(7);
  Model m = build_model(linear_spec(20, 2, {{8, 4, 2}, {6, 3, 2}}, 3));
  MomentumState s = make_momentum_state(m, 0.9);
  for (int step = 0; step < 100; ++step) {
    std::vector<MatrixXd> g(2);
    g[0] = MatrixXd::Random(8, 20);
    g[1] = MatrixXd::Random(6, 8);
    accumulate_momentum(s, g);
    for (Layer& layer : m.layers) {
      auto& l = std::get<SparseLinearLayer>(layer);
      for (int n = 0; n < l.neurons(); ++n)
        for (int j : l.mask.rows[static_cast<std::size_t>(n)]) l.weights(n, j) += rng.uniform(-0.1, 0.1);
    }
    momentum_prune_step(m, s, 1, 1);
    const auto f = fan_in_summary(m);
    REQUIRE(std::get<SparseLinearLayer>(m.layers[0]).mask.rows.size() == 8);
    for (const auto& row : std::get<SparseLinearLayer>(m.layers[0]).mask.rows) REQUIRE(row.size() == 4);
    for (const auto& row : std::get<SparseLinearLayer>(m.layers[1]).mask.rows) REQUIRE(row.size() == 3);
    REQUIRE(f.min == 3);
    REQUIRE(f.max == 4);
    require_off_mask_zero(m);
    validate(m);
  }
}

TEST_CASE("prune and regrow counts must agree") {
  Model m = build_model(linear_spec(6, 1, {{2, 3, 1}}));
  MomentumState s = make_momentum_state(m, 0.9);
  CHECK_THROWS_AS(momentum_prune_step(m, s, 2, 1), Error);
  CHECK_THROWS_AS(momentum_prune_step(m, s, 4, 4), Error);
  CHECK(momentum_prune_step(m, s, 0, 0).empty());
}

TEST_CASE("iterative schedule") {
  CHECK(iterative_support(784, 6, 0, 4) == 784);
  CHECK(iterative_support(784, 6, 1, 4) == 6 + 778 * 3 / 4);
  CHECK(iterative_support(784, 6, 4, 4) == 6);
  for (int events = 1; events <= 9; ++events)
    for (int e = 1; e <= events; ++e) REQUIRE(iterative_support(50, 3, e, events) <= iterative_support(50, 3, e - 1, events));
  CHECK_THROWS_AS(iterative_support(5, 6, 1, 2), Error);
  CHECK_THROWS_AS(iterative_support(10, 6, 3, 2), Error);
}

TEST_CASE("iterative pruning shrinks dense masks to the target fan-in") {
  Model m = build_model(linear_spec(12, 2, {{6, 3, 2}, {4, 2, 2}}, 5));
  densify_sparse_layers(m, 5);
  CHECK(fan_in_summary(m).max == 12);
  const int events = 3;
  for (int e = 1; e <= events; ++e) {
    const auto before = fan_in_summary(m);
    iterative_prune_step(m, e, events);
    const auto after = fan_in_summary(m);
    REQUIRE(after.max <= before.max);
    require_off_mask_zero(m);
  }
  for (const auto& row : std::get<SparseLinearLayer>(m.layers[0]).mask.rows) CHECK(row.size() == 3);
  for (const auto& row : std::get<SparseLinearLayer>(m.layers[1]).mask.rows) CHECK(row.size() == 2);
  validate(m);
}

TEST_CASE("iterative pruning drops the smallest magnitudes, lowest index on ties") {
  Model m = build_model(linear_spec(5, 1, {{1, 2, 1}}, 1));
  densify_sparse_layers(m, 1);
  auto& l = std::get<SparseLinearLayer>(m.layers[0]);
  l.weights.row(0) << 0.5, -0.1, 0.1, 2.0, -0.5;
  iterative_prune_step(m, 1, 1);
  CHECK(l.mask.rows[0] == std::vector<int>{3, 4});
}

TEST_CASE("regrowth allocation") {
  CHECK(regrowth_allocation(100, 0.9, {1.0, 1.0, 2.0}) == std::vector<long long>{2, 2, 6});
  CHECK(regrowth_allocation(10, 0.0, {0.0, 0.0}) == std::vector<long long>{10, 0});
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const long long n = static_cast<long long>(rng.below(10000));
    const double r = rng.uniform();
    std::vector<double> mm(1 + rng.below(5));
    for (auto& v : mm) v = rng.uniform();
    const auto a = regrowth_allocation(n, r, mm);
    REQUIRE(std::accumulate(a.begin(), a.end(), 0LL) ==
            static_cast<long long>(std::floor(static_cast<double>(n) * (1.0 - r) + 1e-9)));
    for (long long v : a) REQUIRE(v >= 0);
  }
  CHECK_THROWS_AS(regrowth_allocation(10, 1.5, {1.0}), Error);
}

TEST_CASE("off-mask weights stay zero through full training runs") {
  const Dataset data = blobs(300, 10, 3, 12);
  for (auto strategy : {SparsityStrategy::Apriori, SparsityStrategy::Momentum, SparsityStrategy::Iterative}) {
    CAPTURE(to_string(strategy));
    Model m = build_model(linear_spec(10, 2, {{12, 3, 2, 2.0}, {3, 4, 3, 2.0}}, 8));
    TrainOptions opts;
    opts.epochs = 3;
    opts.batch_size = 32;
    opts.seed = 1;
    opts.schedule.strategy = strategy;
    opts.schedule.steps_between = 3;
    opts.schedule.prune_rate = 0.34;
    const auto result = train(m, data, opts);
    require_off_mask_zero(result.model);
    validate(result.model);
    const auto f = fan_in_summary(result.model);
    CHECK(f.min == 3);
    CHECK(f.max == 4);
  }
}

}
