#include "lutnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace lutnet {

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

const char* to_string(SparsityStrategy strategy) {
  switch (strategy) {
    case SparsityStrategy::Apriori: return "apriori";
    case SparsityStrategy::Iterative: return "iterative";
    case SparsityStrategy::Momentum: return "momentum";
  }
  return "unknown";
}

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw Error(ErrorKind::InvalidSpec, "unknown optimizer '" + name + "' (expected adam or sgd)");
}

SparsityStrategy strategy_from_string(const std::string& name) {
  if (name == "apriori") return SparsityStrategy::Apriori;
  if (name == "iterative") return SparsityStrategy::Iterative;
  if (name == "momentum") return SparsityStrategy::Momentum;
  throw Error(ErrorKind::InvalidSpec, "unknown strategy '" + name + "' (expected apriori, iterative or momentum)");
}

namespace {

constexpr double kBnMomentum = 0.1;

// Activations are sample-major: one row per sample, one column per feature.
// Batch norm channel c covers columns [c*P, (c+1)*P) of every row.

struct NormCache {
  VectorXd mean;
  VectorXd var;     // biased batch variance (or running variance when not training)
  VectorXd invstd;
  MatrixXd xhat;
  bool batch_stats = false;
};

MatrixXd bn_forward(const MatrixXd& z, int group, const BatchNorm& bn, bool batch_stats, NormCache& c) {
  const int channels = bn.size();
  const Eigen::Index rows = z.rows();
  c.batch_stats = batch_stats;
  c.mean.resize(channels);
  c.var.resize(channels);
  c.invstd.resize(channels);
  c.xhat.resize(rows, z.cols());
  MatrixXd y(rows, z.cols());
  const double count = static_cast<double>(rows) * group;
  for (int ch = 0; ch < channels; ++ch) {
    const auto block = z.middleCols(static_cast<Eigen::Index>(ch) * group, group);
    if (batch_stats) {
      c.mean[ch] = block.sum() / count;
      c.var[ch] = (block.array() - c.mean[ch]).square().sum() / count;
    } else {
      c.mean[ch] = bn.running_mean[ch];
      c.var[ch] = bn.running_var[ch];
    }
    c.invstd[ch] = 1.0 / std::sqrt(c.var[ch] + bn.eps[ch]);
    c.xhat.middleCols(static_cast<Eigen::Index>(ch) * group, group) = (block.array() - c.mean[ch]) * c.invstd[ch];
    y.middleCols(static_cast<Eigen::Index>(ch) * group, group) =
        (c.xhat.middleCols(static_cast<Eigen::Index>(ch) * group, group).array() * bn.gamma[ch]) + bn.beta[ch];
  }
  return y;
}

MatrixXd bn_backward(const MatrixXd& dy, int group, const BatchNorm& bn, const NormCache& c, VectorXd& dgamma,
                     VectorXd& dbeta) {
  const int channels = bn.size();
  dgamma.resize(channels);
  dbeta.resize(channels);
  MatrixXd dz(dy.rows(), dy.cols());
  const double count = static_cast<double>(dy.rows()) * group;
  for (int ch = 0; ch < channels; ++ch) {
    const Eigen::Index at = static_cast<Eigen::Index>(ch) * group;
    const auto g = dy.middleCols(at, group).array();
    const auto xh = c.xhat.middleCols(at, group).array();
    dgamma[ch] = (g * xh).sum();
    dbeta[ch] = g.sum();
    if (c.batch_stats) {
      const double sum_dxhat = dbeta[ch] * bn.gamma[ch];
      const double sum_dxhat_xhat = dgamma[ch] * bn.gamma[ch];
      dz.middleCols(at, group) =
          (c.invstd[ch] / count) * (count * bn.gamma[ch] * g - sum_dxhat - xh * sum_dxhat_xhat);
    } else {
      dz.middleCols(at, group) = g * (bn.gamma[ch] * c.invstd[ch]);
    }
  }
  return dz;
}

MatrixXd apply_quantizer(const MatrixXd& y, const QuantizerParams& q, bool surrogate) {
  MatrixXd a(y.rows(), y.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      a(i, j) = surrogate ? ste_surrogate(y(i, j), q) : quantize_value(y(i, j), q);
  return a;
}

void ste_mask(MatrixXd& grad, const MatrixXd& y, const QuantizerParams& q) {
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      if (!ste_passes(y(i, j), q)) grad(i, j) = 0.0;
}

struct Cache {
  MatrixXd x;  // layer input (already quantized)
  MatrixXd z;
  NormCache bn;
  MatrixXd y;
  MatrixXd a;
  // sparse_conv depthwise stage
  MatrixXd dz;
  NormCache dbn;
  MatrixXd dy;
  MatrixXd mid;
};

/// Column of the input image read by depthwise kernel tap (d, tap) at output
/// pixel p.
struct ConvIndex {
  const SparseConvLayer& layer;
  SpatialShape in;
  SpatialShape out;
  int pixel_count() const { return out.height * out.width; }
  Eigen::Index input_column(int d, int tap, int p) const {
    const int k = layer.kernel_size;
    const int oh = p / out.width, ow = p % out.width;
    const int ch = layer.depthwise_channel(d);
    return (static_cast<Eigen::Index>(ch) * in.height + oh * layer.stride + tap / k) * in.width +
           ow * layer.stride + tap % k;
  }
};

MatrixXd gather(const LayerGeometry& g, const MatrixXd& primary, const std::vector<Cache>& caches) {
  if (g.sources.size() == 1) return g.sources[0] < 0 ? primary : caches[static_cast<std::size_t>(g.sources[0])].a;
  MatrixXd x(primary.rows(), g.input_width);
  Eigen::Index at = 0;
  for (int src : g.sources) {
    const MatrixXd& part = src < 0 ? primary : caches[static_cast<std::size_t>(src)].a;
    x.middleCols(at, part.cols()) = part;
    at += part.cols();
  }
  return x;
}

void forward_batch(const Model& model, const std::vector<LayerGeometry>& geo, const MatrixXd& inputs,
                   const ForwardMode& mode, std::vector<Cache>& caches) {
  const bool batch_stats = mode.training && !mode.freeze_batchnorm;
  MatrixXd primary = apply_quantizer(inputs, model.input_quantizer(), false);
  caches.assign(model.layers.size(), Cache{});
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    Cache& c = caches[i];
    c.x = gather(geo[i], primary, caches);
    const Layer& layer = model.layers[i];
    if (const auto* l = std::get_if<SparseLinearLayer>(&layer)) {
      c.z = MatrixXd::Zero(c.x.rows(), l->neurons());
      for (int n = 0; n < l->neurons(); ++n)
        for (int j : l->mask.rows[static_cast<std::size_t>(n)]) c.z.col(n) += l->weights(n, j) * c.x.col(j);
      c.y = bn_forward(c.z, 1, l->batchnorm, batch_stats, c.bn);
      c.a = apply_quantizer(c.y, l->output_quantizer, mode.surrogate);
    } else if (const auto* d = std::get_if<DenseQuantLinearLayer>(&layer)) {
      c.z = c.x * d->weights.transpose();
      c.y = bn_forward(c.z, 1, d->batchnorm, batch_stats, c.bn);
      c.a = apply_quantizer(c.y, d->output_quantizer, mode.surrogate);
    } else {
      const auto& cv = std::get<SparseConvLayer>(layer);
      const ConvIndex idx{cv, cv.input_shape, cv.output_shape()};
      const int P = idx.pixel_count();
      const int D = cv.depthwise_kernels();
      c.dz = MatrixXd::Zero(c.x.rows(), static_cast<Eigen::Index>(D) * P);
      for (int dk = 0; dk < D; ++dk)
        for (int tap : cv.depthwise_mask.rows[static_cast<std::size_t>(dk)])
          for (int p = 0; p < P; ++p)
            c.dz.col(static_cast<Eigen::Index>(dk) * P + p) += cv.depthwise_weights(dk, tap) * c.x.col(idx.input_column(dk, tap, p));
      c.dy = bn_forward(c.dz, P, cv.depthwise_bn, batch_stats, c.dbn);
      c.mid = apply_quantizer(c.dy, cv.intermediate_quantizer, mode.surrogate);
      c.z = MatrixXd::Zero(c.x.rows(), static_cast<Eigen::Index>(cv.output_maps()) * P);
      for (int o = 0; o < cv.output_maps(); ++o)
        for (int t : cv.pointwise_mask.rows[static_cast<std::size_t>(o)])
          c.z.middleCols(static_cast<Eigen::Index>(o) * P, P) +=
              cv.pointwise_weights(o, t) * c.mid.middleCols(static_cast<Eigen::Index>(t) * P, P);
      c.y = bn_forward(c.z, P, cv.pointwise_bn, batch_stats, c.bn);
      c.a = apply_quantizer(c.y, cv.output_quantizer, mode.surrogate);
    }
  }
}

double loss_from_outputs(const MatrixXd& out, const BatchTargets& t, LossKind kind, MatrixXd* dout,
                         long long* correct) {
  const Eigen::Index B = out.rows();
  double loss = 0.0;
  if (dout) dout->resize(out.rows(), out.cols());
  if (kind == LossKind::SquaredError) {
    if (!t.values || t.values->rows() != B || t.values->cols() != out.cols())
      throw Error(ErrorKind::Training, "squared-error loss needs one target row per sample");
    const MatrixXd diff = out - *t.values;
    loss = 0.5 * diff.squaredNorm() / static_cast<double>(B);
    if (dout) *dout = diff / static_cast<double>(B);
    return loss;
  }
  if (!t.labels || static_cast<Eigen::Index>(t.labels->size()) != B)
    throw Error(ErrorKind::Training, "cross-entropy loss needs one label per sample");
  for (Eigen::Index b = 0; b < B; ++b) {
    const int label = (*t.labels)[static_cast<std::size_t>(b)];
    if (label < 0 || label >= out.cols()) throw Error(ErrorKind::Training, "label outside the output range");
    const double m = out.row(b).maxCoeff();
    const VectorXd e = (out.row(b).array() - m).exp().transpose();
    const double s = e.sum();
    loss += std::log(s) - (out(b, label) - m);
    if (dout) {
      dout->row(b) = (e / s).transpose() / static_cast<double>(B);
      (*dout)(b, label) -= 1.0 / static_cast<double>(B);
    }
    if (correct) {
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < out.cols(); ++k)
        if (out(b, k) > out(b, best)) best = k;
      if (best == label) ++*correct;
    }
  }
  return loss / static_cast<double>(B);
}

void backward_batch(const Model& model, const std::vector<LayerGeometry>& geo, const std::vector<Cache>& caches,
                    const MatrixXd& dout, bool dense_grads, std::vector<LayerGradients>& grads) {
  const std::size_t L = model.layers.size();
  std::vector<MatrixXd> da(L);
  da[L - 1] = dout;
  grads.assign(L, LayerGradients{});
  for (std::size_t ii = L; ii-- > 0;) {
    const Cache& c = caches[ii];
    LayerGradients& g = grads[ii];
    if (da[ii].size() == 0) da[ii] = MatrixXd::Zero(c.a.rows(), c.a.cols());
    MatrixXd dy = da[ii];
    const Layer& layer = model.layers[ii];
    ste_mask(dy, c.y, output_quantizer_of(layer));
    MatrixXd dx;
    if (const auto* l = std::get_if<SparseLinearLayer>(&layer)) {
      const MatrixXd dz = bn_backward(dy, 1, l->batchnorm, c.bn, g.gamma, g.beta);
      if (dense_grads) {
        g.weights = dz.transpose() * c.x;
        for (int n = 0; n < l->neurons(); ++n)  // exact on-mask values, same as the sparse path
          for (int j : l->mask.rows[static_cast<std::size_t>(n)]) g.weights(n, j) = dz.col(n).dot(c.x.col(j));
      } else {
        g.weights = MatrixXd::Zero(l->neurons(), l->input_width());
        for (int n = 0; n < l->neurons(); ++n)
          for (int j : l->mask.rows[static_cast<std::size_t>(n)]) g.weights(n, j) = dz.col(n).dot(c.x.col(j));
      }
      dx = MatrixXd::Zero(c.x.rows(), c.x.cols());
      for (int n = 0; n < l->neurons(); ++n)
        for (int j : l->mask.rows[static_cast<std::size_t>(n)]) dx.col(j) += l->weights(n, j) * dz.col(n);
    } else if (const auto* d = std::get_if<DenseQuantLinearLayer>(&layer)) {
      const MatrixXd dz = bn_backward(dy, 1, d->batchnorm, c.bn, g.gamma, g.beta);
      g.weights = dz.transpose() * c.x;
      dx = dz * d->weights;
    } else {
      const auto& cv = std::get<SparseConvLayer>(layer);
      const ConvIndex idx{cv, cv.input_shape, cv.output_shape()};
      const int P = idx.pixel_count();
      const MatrixXd dz = bn_backward(dy, P, cv.pointwise_bn, c.bn, g.pointwise_gamma, g.pointwise_beta);
      g.pointwise_weights = MatrixXd::Zero(cv.pointwise_weights.rows(), cv.pointwise_weights.cols());
      MatrixXd dmid = MatrixXd::Zero(c.mid.rows(), c.mid.cols());
      for (int o = 0; o < cv.output_maps(); ++o)
        for (int t : cv.pointwise_mask.rows[static_cast<std::size_t>(o)]) {
          const auto dzo = dz.middleCols(static_cast<Eigen::Index>(o) * P, P);
          g.pointwise_weights(o, t) = (dzo.array() * c.mid.middleCols(static_cast<Eigen::Index>(t) * P, P).array()).sum();
          dmid.middleCols(static_cast<Eigen::Index>(t) * P, P) += cv.pointwise_weights(o, t) * dzo;
        }
      ste_mask(dmid, c.dy, cv.intermediate_quantizer);
      const MatrixXd ddz = bn_backward(dmid, P, cv.depthwise_bn, c.dbn, g.gamma, g.beta);
      g.weights = MatrixXd::Zero(cv.depthwise_weights.rows(), cv.depthwise_weights.cols());
      dx = MatrixXd::Zero(c.x.rows(), c.x.cols());
      for (int dk = 0; dk < cv.depthwise_kernels(); ++dk)
        for (int tap : cv.depthwise_mask.rows[static_cast<std::size_t>(dk)])
          for (int p = 0; p < P; ++p) {
            const auto col = ddz.col(static_cast<Eigen::Index>(dk) * P + p);
            const Eigen::Index in = idx.input_column(dk, tap, p);
            g.weights(dk, tap) += col.dot(c.x.col(in));
            dx.col(in) += cv.depthwise_weights(dk, tap) * col;
          }
    }
    Eigen::Index at = 0;
    for (int src : geo[ii].sources) {
      const Eigen::Index w = src < 0 ? model.topology.input_features : caches[static_cast<std::size_t>(src)].a.cols();
      if (src >= 0) {
        auto& target = da[static_cast<std::size_t>(src)];
        if (target.size() == 0) target = MatrixXd::Zero(dx.rows(), w);
        target += dx.middleCols(at, w);
      }
      at += w;
    }
  }
}

// ---------------------------------------------------------------------------
// Optimizer state mirrors LayerGradients.

struct Moments {
  LayerGradients m;
  LayerGradients v;
};

LayerGradients zeros_like(const Layer& layer) {
  LayerGradients g;
  if (const auto* l = std::get_if<SparseLinearLayer>(&layer)) {
    g.weights = MatrixXd::Zero(l->weights.rows(), l->weights.cols());
    g.gamma = g.beta = VectorXd::Zero(l->neurons());
  } else if (const auto* d = std::get_if<DenseQuantLinearLayer>(&layer)) {
    g.weights = MatrixXd::Zero(d->weights.rows(), d->weights.cols());
    g.gamma = g.beta = VectorXd::Zero(d->neurons());
  } else {
    const auto& c = std::get<SparseConvLayer>(layer);
    g.weights = MatrixXd::Zero(c.depthwise_weights.rows(), c.depthwise_weights.cols());
    g.gamma = g.beta = VectorXd::Zero(c.depthwise_kernels());
    g.pointwise_weights = MatrixXd::Zero(c.pointwise_weights.rows(), c.pointwise_weights.cols());
    g.pointwise_gamma = g.pointwise_beta = VectorXd::Zero(c.output_maps());
  }
  return g;
}

class Optimizer {
 public:
  Optimizer(const OptimizerParams& p, const Model& model) : p_(p) {
    for (const Layer& l : model.layers) state_.push_back({zeros_like(l), zeros_like(l)});
  }

  void begin_step() { ++t_; }

  void update(double& w, double g, double& m, double& v) const {
    if (p_.kind == OptimizerKind::Adam) {
      m = p_.beta1 * m + (1.0 - p_.beta1) * g;
      v = p_.beta2 * v + (1.0 - p_.beta2) * g * g;
      const double mh = m / (1.0 - std::pow(p_.beta1, static_cast<double>(t_)));
      const double vh = v / (1.0 - std::pow(p_.beta2, static_cast<double>(t_)));
      w -= p_.lr * mh / (std::sqrt(vh) + p_.eps);
    } else {
      m = p_.momentum * m + g;
      w -= p_.lr * m;
    }
  }

  void update_masked(MatrixXd& w, const MatrixXd& g, MatrixXd& m, MatrixXd& v, const ConnectivityMask& mask) const {
    for (int n = 0; n < mask.neurons(); ++n)
      for (int j : mask.rows[static_cast<std::size_t>(n)]) update(w(n, j), g(n, j), m(n, j), v(n, j));
  }

  void update_all(double* w, const double* g, double* m, double* v, Eigen::Index size) const {
    for (Eigen::Index i = 0; i < size; ++i) update(w[i], g[i], m[i], v[i]);
  }

  Moments& state(std::size_t layer) { return state_[layer]; }

 private:
  OptimizerParams p_;
  long long t_ = 0;
  std::vector<Moments> state_;
};

void update_running(BatchNorm& bn, const NormCache& c, double count) {
  const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
  bn.running_mean = (1.0 - kBnMomentum) * bn.running_mean + kBnMomentum * c.mean;
  bn.running_var = (1.0 - kBnMomentum) * bn.running_var + kBnMomentum * unbias * c.var;
}

void reset_positions(Moments& mo, const std::vector<PruneEvent>& events, std::size_t layer) {
  for (const PruneEvent& e : events) {
    if (static_cast<std::size_t>(e.layer) != layer) continue;
    for (int j : e.pruned) mo.m.weights(e.neuron, j) = mo.v.weights(e.neuron, j) = 0.0;
    for (int j : e.regrown) mo.m.weights(e.neuron, j) = mo.v.weights(e.neuron, j) = 0.0;
  }
}

}  // namespace

double loss_and_gradients(const Model& model, const MatrixXd& inputs, const BatchTargets& targets,
                          const ForwardMode& mode, std::vector<LayerGradients>* grads, bool dense_grads) {
  const auto geo = model.geometry();
  if (inputs.cols() != model.topology.input_features)
    throw Error(ErrorKind::WidthMismatch, "batch feature width does not match the model input");
  std::vector<Cache> caches;
  forward_batch(model, geo, inputs, mode, caches);
  MatrixXd dout;
  const double loss = loss_from_outputs(caches.back().a, targets, mode.loss, grads ? &dout : nullptr, nullptr);
  if (grads) backward_batch(model, geo, caches, dout, dense_grads, *grads);
  return loss;
}

TrainResult train(Model model, const Dataset& data, const TrainOptions& options, const Dataset* test) {
  if (data.feature_count() != model.topology.input_features)
    throw Error(ErrorKind::WidthMismatch, "dataset has " + std::to_string(data.feature_count()) +
                                              " features, model expects " +
                                              std::to_string(model.topology.input_features));
  if (options.epochs <= 0 || options.batch_size <= 0)
    throw Error(ErrorKind::InvalidSpec, "epochs and batch size must be positive");
  if (data.size() == 0) throw Error(ErrorKind::InvalidSpec, "empty training set");
  const auto geo = model.geometry();
  const PruneSchedule& sched = options.schedule;

  // Dense layers train a latent copy; the model always holds its grid projection.
  std::vector<MatrixXd> latent(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (const auto* d = std::get_if<DenseQuantLinearLayer>(&model.layers[i])) latent[i] = d->weights;

  int events = 0;
  if (sched.strategy == SparsityStrategy::Iterative) {
    events = sched.events > 0 ? sched.events : std::max(1, options.epochs - 1);
    if (events > options.epochs)
      throw Error(ErrorKind::InvalidSpec, "iterative pruning needs at most one prune event per epoch");
    densify_sparse_layers(model, model.topology.seed);
  }
  int p1 = 0;
  MomentumState momentum;
  if (sched.strategy == SparsityStrategy::Momentum) {
    momentum = make_momentum_state(model, sched.alpha);
    int min_fan_in = -1;
    for (const LayerSpec& ls : model.topology.layers)
      if (ls.kind == LayerKind::SparseLinear) min_fan_in = min_fan_in < 0 ? ls.fan_in : std::min(min_fan_in, ls.fan_in);
    p1 = sched.p1 >= 0 ? sched.p1 : static_cast<int>(std::floor(sched.prune_rate * std::max(min_fan_in, 0)));
    const int r1 = sched.r1 >= 0 ? sched.r1 : p1;
    if (r1 != p1) throw Error(ErrorKind::InvalidSpec, "momentum pruning needs P1 == R1");
  }
  const bool dense_grads = sched.strategy == SparsityStrategy::Momentum;

  Optimizer opt(options.optimizer, model);
  ForwardMode mode;
  mode.training = true;
  mode.freeze_batchnorm = options.freeze_batchnorm;
  mode.loss = options.loss;

  TrainResult result;
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::vector<Cache> caches;
  std::vector<LayerGradients> grads;
  std::vector<MatrixXd> dense_w(model.layers.size());
  long long step = 0;
  bool stop = false;
  for (int epoch = 1; epoch <= options.epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(options.seed, {0x5eed, static_cast<std::uint64_t>(epoch)});
    rng.shuffle(order);
    double loss_sum = 0.0;
    long long batches = 0, correct = 0, seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      const auto B = static_cast<Eigen::Index>(end - start);
      MatrixXd x(B, data.feature_count());
      std::vector<int> labels;
      MatrixXd tv;
      if (options.loss == LossKind::SquaredError) tv.resize(B, data.targets.cols());
      for (Eigen::Index b = 0; b < B; ++b) {
        const int s = order[start + static_cast<std::size_t>(b)];
        x.row(b) = data.features.row(s);
        if (options.loss == LossKind::SquaredError)
          tv.row(b) = data.targets.row(s);
        else
          labels.push_back(data.labels[static_cast<std::size_t>(s)]);
      }
      try {
        forward_batch(model, geo, x, mode, caches);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFinite) throw;
        std::ostringstream os;
        os << "non-finite activations at epoch " << epoch << ", step " << step + 1
           << " (try a smaller learning rate): " << e.what();
        throw Error(ErrorKind::Training, os.str());
      }
      MatrixXd dout;
      const BatchTargets bt{&labels, &tv};
      const double loss = loss_from_outputs(caches.back().a, bt, options.loss, &dout, &correct);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << ", step " << step + 1
           << " (try a smaller learning rate)";
        throw Error(ErrorKind::Training, os.str());
      }
      backward_batch(model, geo, caches, dout, dense_grads, grads);

      opt.begin_step();
      for (std::size_t i = 0; i < model.layers.size(); ++i) {
        Moments& mo = opt.state(i);
        LayerGradients& g = grads[i];
        if (auto* l = std::get_if<SparseLinearLayer>(&model.layers[i])) {
          opt.update_masked(l->weights, g.weights, mo.m.weights, mo.v.weights, l->mask);
          if (!options.freeze_batchnorm) {
            opt.update_all(l->batchnorm.gamma.data(), g.gamma.data(), mo.m.gamma.data(), mo.v.gamma.data(), g.gamma.size());
            opt.update_all(l->batchnorm.beta.data(), g.beta.data(), mo.m.beta.data(), mo.v.beta.data(), g.beta.size());
            update_running(l->batchnorm, caches[i].bn, static_cast<double>(B));
          }
          if (dense_grads) dense_w[i] = g.weights;
        } else if (auto* d = std::get_if<DenseQuantLinearLayer>(&model.layers[i])) {
          opt.update_all(latent[i].data(), g.weights.data(), mo.m.weights.data(), mo.v.weights.data(), latent[i].size());
          latent[i] = latent[i].cwiseMax(-d->max_weight).cwiseMin(d->max_weight);
          d->weights = latent[i].unaryExpr([&](double w) { return quantize_weight(w, d->weight_bit_width, d->max_weight); });
          if (!options.freeze_batchnorm) {
            opt.update_all(d->batchnorm.gamma.data(), g.gamma.data(), mo.m.gamma.data(), mo.v.gamma.data(), g.gamma.size());
            opt.update_all(d->batchnorm.beta.data(), g.beta.data(), mo.m.beta.data(), mo.v.beta.data(), g.beta.size());
            update_running(d->batchnorm, caches[i].bn, static_cast<double>(B));
          }
        } else {
          auto& c = std::get<SparseConvLayer>(model.layers[i]);
          const double count = static_cast<double>(B) * c.output_shape().height * c.output_shape().width;
          opt.update_masked(c.depthwise_weights, g.weights, mo.m.weights, mo.v.weights, c.depthwise_mask);
          opt.update_masked(c.pointwise_weights, g.pointwise_weights, mo.m.pointwise_weights, mo.v.pointwise_weights,
                            c.pointwise_mask);
          if (!options.freeze_batchnorm) {
            opt.update_all(c.depthwise_bn.gamma.data(), g.gamma.data(), mo.m.gamma.data(), mo.v.gamma.data(), g.gamma.size());
            opt.update_all(c.depthwise_bn.beta.data(), g.beta.data(), mo.m.beta.data(), mo.v.beta.data(), g.beta.size());
            opt.update_all(c.pointwise_bn.gamma.data(), g.pointwise_gamma.data(), mo.m.pointwise_gamma.data(),
                           mo.v.pointwise_gamma.data(), g.pointwise_gamma.size());
            opt.update_all(c.pointwise_bn.beta.data(), g.pointwise_beta.data(), mo.m.pointwise_beta.data(),
                           mo.v.pointwise_beta.data(), g.pointwise_beta.size());
            update_running(c.depthwise_bn, caches[i].dbn, count);
            update_running(c.pointwise_bn, caches[i].bn, count);
          }
        }
      }
      if (dense_grads) accumulate_momentum(momentum, dense_w);
      ++step;
      loss_sum += loss;
      ++batches;
      seen += B;

      const bool last_epoch = epoch == options.epochs;
      if (sched.strategy == SparsityStrategy::Momentum && sched.steps_between > 0 &&
          step % sched.steps_between == 0 && !(last_epoch && end == order.size())) {
        const auto ev = momentum_prune_step(model, momentum, p1, p1);
        for (std::size_t i = 0; i < model.layers.size(); ++i) reset_positions(opt.state(i), ev, i);
      }
      if (options.max_steps >= 0 && step >= options.max_steps) {
        stop = true;
        break;
      }
    }
    if (sched.strategy == SparsityStrategy::Momentum && sched.steps_between == 0 && epoch < options.epochs &&
        !stop) {
      const auto ev = momentum_prune_step(model, momentum, p1, p1);
      for (std::size_t i = 0; i < model.layers.size(); ++i) reset_positions(opt.state(i), ev, i);
    }
    if (sched.strategy == SparsityStrategy::Iterative && epoch <= events) {
      const auto ev = iterative_prune_step(model, epoch, events);
      for (std::size_t i = 0; i < model.layers.size(); ++i) reset_positions(opt.state(i), ev, i);
    } else if (sched.strategy == SparsityStrategy::Iterative && stop && epoch < events) {
      // An early stop still has to leave a valid model.
      const auto ev = iterative_prune_step(model, events, events);
      (void)ev;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(std::max<long long>(batches, 1));
    m.train_accuracy = options.loss == LossKind::CrossEntropy ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    if (test && options.loss == LossKind::CrossEntropy) m.test_accuracy = evaluate_accuracy(model, *test);
    m.fan_in = fan_in_summary(model);
    result.metrics.push_back(m);
    if (options.on_epoch) options.on_epoch(m);
  }
  result.model = std::move(model);
  return result;
}

double evaluate_accuracy(const Model& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const auto geo = model.geometry();
  long long correct = 0;
  for (int s = 0; s < data.size(); ++s)
    if (predict(model, geo, data.features.row(s).transpose()) == data.labels[static_cast<std::size_t>(s)]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::ostringstream os;
  os << "epoch,loss,train_accuracy,test_accuracy,fan_in_min,fan_in_mean,fan_in_max\n";
  char buf[256];
  for (const auto& m : metrics) {
    char test[40] = "";
    if (m.test_accuracy) std::snprintf(test, sizeof test, "%.17g", *m.test_accuracy);
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%s,%d,%.17g,%d\n", m.epoch, m.loss, m.train_accuracy, test,
                  m.fan_in.min, m.fan_in.mean, m.fan_in.max);
    os << buf;
  }
  return os.str();
}

}  // namespace lutnet
