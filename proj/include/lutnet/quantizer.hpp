#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "lutnet/common.hpp"

namespace lutnet {

/// Activation quantizer configuration. One bit selects the hard-tanh
/// quantizer (codes 0/1 for -max_val/+max_val); wider settings select an
/// unsigned ReLU quantizer with codes 0..2^b-1 spaced max_val/(2^b-1) apart.
struct QuantizerParams {
  int bit_width = 1;
  double max_val = 1.0;

  bool is_binary() const noexcept { return bit_width == 1; }
  std::uint32_t max_code() const noexcept { return (std::uint32_t{1} << bit_width) - 1; }
  /// Spacing between adjacent dequantized levels (max_val itself for 1 bit).
  double step() const noexcept {
    return is_binary() ? max_val : max_val / static_cast<double>(max_code());
  }
  void validate() const;

  friend bool operator==(const QuantizerParams&, const QuantizerParams&) = default;
};

inline constexpr int kMaxActivationBits = 16;

template <typename Scalar>
struct BasicQuantTensor {
  Vector<Scalar> values;  // dequantized
  Scalar scale{};
  int bit_width = 0;
};
using QuantTensor = BasicQuantTensor<double>;

/// Integer code for a real input. Round half away from zero, clamp to the
/// code range; for one bit, x >= 0 maps to code 1.
std::uint32_t quantize_code(double x, const QuantizerParams& p);

/// Dequantized value of a code. Every forward path builds activations through
/// this function so that the float path and truth tables see identical bits.
inline double value_of(std::uint32_t code, const QuantizerParams& p) {
  if (p.is_binary()) return code ? p.max_val : -p.max_val;
  return static_cast<double>(code) * p.step();
}

inline double quantize_value(double x, const QuantizerParams& p) {
  return value_of(quantize_code(x, p), p);
}

/// Inverse of value_of. Throws ErrorKind::OffGrid when `value` is not within
/// 1e-9 (relative to max_val) of a grid point.
std::uint32_t code_of(double value, const QuantizerParams& p);

template <typename Derived>
BasicQuantTensor<typename Derived::Scalar> quantize(const Eigen::MatrixBase<Derived>& x,
                                                    const QuantizerParams& p) {
  using Scalar = typename Derived::Scalar;
  BasicQuantTensor<Scalar> out;
  out.values.resize(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    out.values[i] = static_cast<Scalar>(quantize_value(static_cast<double>(x(i)), p));
  out.scale = static_cast<Scalar>(p.step());
  out.bit_width = p.bit_width;
  return out;
}

/// The clamp that the straight-through estimator differentiates: hard-tanh for
/// one bit, clip to [0, max_val] otherwise.
inline double ste_surrogate(double x, const QuantizerParams& p) {
  const double lo = p.is_binary() ? -p.max_val : 0.0;
  return std::fmin(std::fmax(x, lo), p.max_val);
}

inline bool ste_passes(double x, const QuantizerParams& p) {
  const double lo = p.is_binary() ? -p.max_val : 0.0;
  return x >= lo && x <= p.max_val;
}

template <typename DerivedX, typename DerivedG>
Matrix<typename DerivedX::Scalar> quantize_ste_grad(const Eigen::MatrixBase<DerivedX>& x,
                                                    const QuantizerParams& p,
                                                    const Eigen::MatrixBase<DerivedG>& upstream) {
  Matrix<typename DerivedX::Scalar> g(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      g(i, j) = ste_passes(static_cast<double>(x(i, j)), p) ? upstream(i, j) : 0;
  return g;
}

/// MSB-first bit string of `width` characters.
std::string code_to_bits(std::uint64_t code, int width);
std::uint64_t bits_to_code(const std::string& bits);

}  // namespace lutnet
