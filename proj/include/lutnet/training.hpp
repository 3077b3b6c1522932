#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lutnet/data.hpp"
#include "lutnet/model.hpp"

namespace lutnet {

enum class OptimizerKind { Adam, Sgd };
enum class SparsityStrategy { Apriori, Iterative, Momentum };

const char* to_string(OptimizerKind kind);
const char* to_string(SparsityStrategy strategy);
OptimizerKind optimizer_from_string(const std::string& name);
SparsityStrategy strategy_from_string(const std::string& name);

struct OptimizerParams {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // SGD
};

struct PruneSchedule {
  SparsityStrategy strategy = SparsityStrategy::Apriori;
  double prune_rate = 0.2;  // p: fraction of a neuron's fan-in replaced per momentum step
  int steps_between = 0;    // optimizer steps between prune events; 0 means once per epoch
  int p1 = -1;              // per-neuron prune count; -1 derives floor(p * F), F the smallest fan_in
  int r1 = -1;              // per-neuron regrow count; -1 equals p1
  double alpha = 0.9;       // momentum smoothing
  int events = 0;           // iterative: number of prune events; 0 means epochs - 1 (at least 1)
};

/// Per-layer exponentially smoothed gradients and the Algorithm-1 statistics.
/// `momentum[i]` is empty for layers without a prunable mask.
struct MomentumState {
  double alpha = 0.9;
  std::vector<MatrixXd> momentum;
  std::vector<double> mean_momentum;
  double total_momentum = 0.0;
  std::vector<long long> nonzero;
  long long total_nonzero = 0;
};

MomentumState make_momentum_state(const Model& model, double alpha);

/// M <- alpha * M + (1 - alpha) * grad for every prunable layer.
void accumulate_momentum(MomentumState& state, const std::vector<MatrixXd>& dense_grads);

/// Recomputes MeanMomentum, TotalMomentum, NonZero and TotalNonZero.
void update_momentum_statistics(MomentumState& state, const Model& model);

struct PruneEvent {
  int layer = 0;
  int neuron = 0;
  std::vector<int> pruned;
  std::vector<int> regrown;
};

/// Prunes the p1 smallest |w| on each mask and regrows r1 off-mask positions
/// with the largest |M|, skipping positions pruned in the same step. Ties go
/// to the lowest input index. Regrown weights start at zero.
std::vector<PruneEvent> momentum_prune_step(Model& model, MomentumState& state, int p1, int r1);

/// Support size after prune event `event` of `events` for a neuron that
/// starts with `initial` inputs: F + (initial - F) * (events - event) / events.
int iterative_support(int initial, int target, int event, int events);

/// Shrinks every sparse_linear mask to iterative_support(input width,
/// fan_in, event, events) entries by dropping the smallest |w| (ties: lowest
/// index dropped first). Pruned weights are zeroed; masks never grow.
std::vector<PruneEvent> iterative_prune_step(Model& model, int event, int events);

/// Regrowth_l = floor(budget * m_l / sum(m)) with budget floor(n * (1 - r));
/// the rounding remainder goes to the largest-momentum layer.
std::vector<long long> regrowth_allocation(long long total_params, double sparsity,
                                           const std::vector<double>& mean_momenta);

/// Replaces every sparse_linear mask with the full input set; newly exposed
/// weights get small random values so magnitude pruning has a signal.
void densify_sparse_layers(Model& model, std::uint64_t seed);

/// Min, mean and max per-neuron fan-in across all sparse masks.
struct FanInSummary {
  int min = 0;
  double mean = 0.0;
  int max = 0;
};
FanInSummary fan_in_summary(const Model& model);

/// Per-parameter gradients in the same shapes as the model parameters.
struct LayerGradients {
  MatrixXd weights;  // sparse/dense weights, or depthwise weights for conv
  VectorXd gamma;
  VectorXd beta;
  MatrixXd pointwise_weights;
  VectorXd pointwise_gamma;
  VectorXd pointwise_beta;
};

enum class LossKind { CrossEntropy, SquaredError };

struct ForwardMode {
  bool training = true;          // batch statistics in batch norm
  bool surrogate = false;        // replace every quantizer after a layer by its STE clamp
  bool freeze_batchnorm = false; // running statistics even in training; gamma/beta not trained
  LossKind loss = LossKind::CrossEntropy;
};

/// Targets of one minibatch: class labels for cross-entropy, or one row of
/// real targets per sample for squared error.
struct BatchTargets {
  const std::vector<int>* labels = nullptr;
  const MatrixXd* values = nullptr;
};

/// Loss of the final layer's dequantized outputs averaged over the batch
/// (rows of `inputs`, in model feature units) and, when `grads` is given, its
/// gradient. Cross-entropy applies a softmax first; squared error is
/// 0.5 * |y - t|^2. Running statistics are not touched. With `dense_grads`,
/// sparse_linear weight gradients are also computed off-mask.
double loss_and_gradients(const Model& model, const MatrixXd& inputs, const BatchTargets& targets,
                          const ForwardMode& mode, std::vector<LayerGradients>* grads,
                          bool dense_grads = false);

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  FanInSummary fan_in;
};

struct TrainOptions {
  int epochs = 10;
  int batch_size = 64;
  std::uint64_t seed = 0;     // minibatch order
  LossKind loss = LossKind::CrossEntropy;
  bool freeze_batchnorm = false;
  long long max_steps = -1;   // stop early after this many optimizer steps
  OptimizerParams optimizer;
  PruneSchedule schedule;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  Model model;
  std::vector<EpochMetrics> metrics;
};

/// Trains on `train`, whose features are already fitted to the input
/// quantizer and whose `targets` are set for squared error. Evaluates `test`
/// after every epoch when given. Throws ErrorKind::Training on a non-finite
/// loss.
TrainResult train(Model model, const Dataset& train, const TrainOptions& options,
                  const Dataset* test = nullptr);

/// Fraction of samples whose argmax output matches the label, using the
/// reference inference path.
double evaluate_accuracy(const Model& model, const Dataset& data);

std::string metrics_csv(const std::vector<EpochMetrics>& metrics);

}  // namespace lutnet
