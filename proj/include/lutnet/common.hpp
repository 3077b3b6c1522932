#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace lutnet {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

enum class ErrorKind {
  InvalidSpec,
  Parse,
  VersionMismatch,
  InvariantViolation,
  WidthMismatch,
  NonFinite,
  OffGrid,
  LimitExceeded,
  MissingTable,
  UnsupportedLayer,
  Training,
  Io,
};

const char* to_string(ErrorKind kind);

/// Every failure the toolchain reports carries a kind so callers (and the CLI
/// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Deterministic PRNG with platform-independent derived distributions.
/// The standard <random> distributions are implementation-defined, which
/// would make masks and metric logs differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  /// Seeds from an ordered tuple of integers (e.g. seed, layer, neuron).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound), unbiased.
  std::uint64_t below(std::uint64_t bound);
  double normal();

  /// Uniformly random `count`-subset of [0, n), sorted ascending.
  std::vector<int> sample_subset(int n, int count);
  /// In-place Fisher-Yates shuffle.
  void shuffle(std::vector<int>& items);

 private:
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace lutnet
