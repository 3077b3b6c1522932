#include <algorithm>
#include <cmath>
#include <numeric>

#include "lutnet/training.hpp"

namespace lutnet {

namespace {

/// Indices of `candidates` ordered by key, ties by lowest index.
template <typename Key>
std::vector<int> ordered(std::vector<int> candidates, Key key, bool ascending) {
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    const double ka = key(a), kb = key(b);
    if (ka != kb) return ascending ? ka < kb : ka > kb;
    return a < b;
  });
  return candidates;
}

}  // namespace

MomentumState make_momentum_state(const Model& model, double alpha) {
  MomentumState s;
  s.alpha = alpha;
  s.momentum.resize(model.layers.size());
  s.mean_momentum.assign(model.layers.size(), 0.0);
  s.nonzero.assign(model.layers.size(), 0);
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (const auto* l = std::get_if<SparseLinearLayer>(&model.layers[i]))
      s.momentum[i] = MatrixXd::Zero(l->weights.rows(), l->weights.cols());
  return s;
}

void accumulate_momentum(MomentumState& state, const std::vector<MatrixXd>& dense_grads) {
  for (std::size_t i = 0; i < state.momentum.size(); ++i) {
    if (state.momentum[i].size() == 0) continue;
    state.momentum[i] = state.alpha * state.momentum[i] + (1.0 - state.alpha) * dense_grads[i];
  }
}

void update_momentum_statistics(MomentumState& state, const Model& model) {
  state.total_momentum = 0.0;
  state.total_nonzero = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    state.mean_momentum[i] = 0.0;
    state.nonzero[i] = 0;
    const auto* l = std::get_if<SparseLinearLayer>(&model.layers[i]);
    if (!l) continue;
    double sum = 0.0;
    long long nz = 0;
    for (int n = 0; n < l->mask.neurons(); ++n)
      for (int j : l->mask.rows[static_cast<std::size_t>(n)]) {
        sum += std::fabs(state.momentum[i](n, j));
        ++nz;
      }
    state.nonzero[i] = nz;
    state.mean_momentum[i] = nz ? sum / static_cast<double>(nz) : 0.0;
    state.total_momentum += state.mean_momentum[i];
    state.total_nonzero += nz;
  }
}

std::vector<PruneEvent> momentum_prune_step(Model& model, MomentumState& state, int p1, int r1) {
  if (p1 < 0 || r1 < 0) throw Error(ErrorKind::InvalidSpec, "prune and regrow counts must be non-negative");
  if (p1 != r1) throw Error(ErrorKind::InvalidSpec, "momentum pruning needs P1 == R1 to keep the fan-in");
  update_momentum_statistics(state, model);
  std::vector<PruneEvent> events;
  if (p1 == 0) return events;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto* l = std::get_if<SparseLinearLayer>(&model.layers[i]);
    if (!l) continue;
    const MatrixXd& M = state.momentum[i];
    for (int n = 0; n < l->mask.neurons(); ++n) {
      auto& row = l->mask.rows[static_cast<std::size_t>(n)];
      const int fan_in = static_cast<int>(row.size());
      if (p1 > fan_in)
        throw Error(ErrorKind::InvalidSpec, "P1 = " + std::to_string(p1) + " exceeds fan-in " + std::to_string(fan_in));
      const auto by_weight = ordered(row, [&](int j) { return std::fabs(l->weights(n, j)); }, true);
      PruneEvent ev;
      ev.layer = static_cast<int>(i);
      ev.neuron = n;
      ev.pruned.assign(by_weight.begin(), by_weight.begin() + p1);
      std::sort(ev.pruned.begin(), ev.pruned.end());

      std::vector<int> candidates;
      for (int j = 0; j < l->mask.input_width; ++j)
        if (!std::binary_search(row.begin(), row.end(), j)) candidates.push_back(j);
      if (static_cast<int>(candidates.size()) < r1)
        throw Error(ErrorKind::InvalidSpec, "layer " + std::to_string(i) + ": fewer than R1 regrowth candidates");
      const auto by_momentum = ordered(candidates, [&](int j) { return std::fabs(M(n, j)); }, false);
      ev.regrown.assign(by_momentum.begin(), by_momentum.begin() + r1);
      std::sort(ev.regrown.begin(), ev.regrown.end());

      std::vector<int> next;
      std::set_difference(row.begin(), row.end(), ev.pruned.begin(), ev.pruned.end(), std::back_inserter(next));
      for (int j : ev.pruned) l->weights(n, j) = 0.0;
      for (int j : ev.regrown) l->weights(n, j) = 0.0;
      next.insert(next.end(), ev.regrown.begin(), ev.regrown.end());
      std::sort(next.begin(), next.end());
      row = std::move(next);
      events.push_back(std::move(ev));
    }
  }
  return events;
}

int iterative_support(int initial, int target, int event, int events) {
  if (events <= 0 || event < 0 || event > events)
    throw Error(ErrorKind::InvalidSpec, "prune event outside [0, events]");
  if (initial < target) throw Error(ErrorKind::InvalidSpec, "iterative schedule would undershoot the target fan-in");
  return target + static_cast<int>((static_cast<long long>(initial - target) * (events - event)) / events);
}

std::vector<PruneEvent> iterative_prune_step(Model& model, int event, int events) {
  const auto geo = model.geometry();
  std::vector<PruneEvent> out;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto* l = std::get_if<SparseLinearLayer>(&model.layers[i]);
    if (!l) continue;
    const int keep = iterative_support(geo[i].input_width, model.topology.layers[i].fan_in, event, events);
    for (int n = 0; n < l->mask.neurons(); ++n) {
      auto& row = l->mask.rows[static_cast<std::size_t>(n)];
      if (static_cast<int>(row.size()) < keep)
        throw Error(ErrorKind::InvalidSpec, "layer " + std::to_string(i) + ": support already below the schedule");
      const int drop = static_cast<int>(row.size()) - keep;
      if (drop == 0) continue;
      const auto by_weight = ordered(row, [&](int j) { return std::fabs(l->weights(n, j)); }, true);
      PruneEvent ev;
      ev.layer = static_cast<int>(i);
      ev.neuron = n;
      ev.pruned.assign(by_weight.begin(), by_weight.begin() + drop);
      std::sort(ev.pruned.begin(), ev.pruned.end());
      std::vector<int> next;
      std::set_difference(row.begin(), row.end(), ev.pruned.begin(), ev.pruned.end(), std::back_inserter(next));
      for (int j : ev.pruned) l->weights(n, j) = 0.0;
      row = std::move(next);
      out.push_back(std::move(ev));
    }
  }
  return out;
}

std::vector<long long> regrowth_allocation(long long total_params, double sparsity,
                                           const std::vector<double>& mean_momenta) {
  if (total_params < 0 || !(sparsity >= 0.0 && sparsity <= 1.0))
    throw Error(ErrorKind::InvalidSpec, "regrowth allocation needs n >= 0 and r in [0, 1]");
  std::vector<long long> out(mean_momenta.size(), 0);
  if (mean_momenta.empty()) return out;
  // The epsilon absorbs representation error such as 100 * (1 - 0.9) = 9.999...
  const auto budget = static_cast<long long>(std::floor(static_cast<double>(total_params) * (1.0 - sparsity) + 1e-9));
  const double sum = std::accumulate(mean_momenta.begin(), mean_momenta.end(), 0.0);
  std::size_t largest = 0;
  for (std::size_t l = 0; l < mean_momenta.size(); ++l) {
    if (mean_momenta[l] < 0.0) throw Error(ErrorKind::InvalidSpec, "mean momenta must be non-negative");
    if (mean_momenta[l] > mean_momenta[largest]) largest = l;
  }
  long long given = 0;
  if (sum > 0.0)
    for (std::size_t l = 0; l < mean_momenta.size(); ++l) {
      out[l] = static_cast<long long>(std::floor(static_cast<double>(budget) * (mean_momenta[l] / sum) + 1e-9));
      given += out[l];
    }
  out[largest] += budget - given;
  return out;
}

void densify_sparse_layers(Model& model, std::uint64_t seed) {
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto* l = std::get_if<SparseLinearLayer>(&model.layers[i]);
    if (!l) continue;
    const double scale = std::sqrt(2.0 / static_cast<double>(l->mask.input_width));
    for (int n = 0; n < l->mask.neurons(); ++n) {
      Rng rng = Rng::derive(seed, {0xde45e, i, static_cast<std::uint64_t>(n)});
      auto& row = l->mask.rows[static_cast<std::size_t>(n)];
      row.resize(static_cast<std::size_t>(l->mask.input_width));
      std::iota(row.begin(), row.end(), 0);
      for (int j = 0; j < l->mask.input_width; ++j) l->weights(n, j) = scale * rng.normal();
    }
  }
}

FanInSummary fan_in_summary(const Model& model) {
  FanInSummary s;
  long long total = 0, count = 0;
  bool first = true;
  auto visit = [&](const ConnectivityMask& m) {
    for (const auto& r : m.rows) {
      const int f = static_cast<int>(r.size());
      s.min = first ? f : std::min(s.min, f);
      s.max = first ? f : std::max(s.max, f);
      first = false;
      total += f;
      ++count;
    }
  };
  for (const Layer& layer : model.layers) {
    if (const auto* l = std::get_if<SparseLinearLayer>(&layer)) visit(l->mask);
    if (const auto* c = std::get_if<SparseConvLayer>(&layer)) {
      visit(c->depthwise_mask);
      visit(c->pointwise_mask);
    }
  }
  s.mean = count ? static_cast<double>(total) / static_cast<double>(count) : 0.0;
  return s;
}

}  // namespace lutnet
