#include "lutnet/quantizer.hpp"

#include <sstream>

namespace lutnet {

void QuantizerParams::validate() const {
  if (bit_width < 1 || bit_width > kMaxActivationBits) {
    std::ostringstream os;
    os << "quantizer bit width " << bit_width << " outside [1, " << kMaxActivationBits << "]";
    throw Error(ErrorKind::InvalidSpec, os.str());
  }
  if (!(max_val > 0.0) || !std::isfinite(max_val))
    throw Error(ErrorKind::InvalidSpec, "quantizer max_val must be positive and finite");
}

std::uint32_t quantize_code(double x, const QuantizerParams& p) {
  if (!std::isfinite(x)) throw Error(ErrorKind::NonFinite, "non-finite quantizer input");
  if (p.is_binary()) return x >= 0.0 ? 1u : 0u;
  const double level = std::round(x / p.step());
  if (level <= 0.0) return 0;
  const double top = static_cast<double>(p.max_code());
  return level >= top ? p.max_code() : static_cast<std::uint32_t>(level);
}

std::uint32_t code_of(double value, const QuantizerParams& p) {
  if (!std::isfinite(value)) throw Error(ErrorKind::NonFinite, "non-finite quantized value");
  const double tol = 1e-9 * p.max_val;
  if (p.is_binary()) {
    if (std::fabs(value - p.max_val) <= tol) return 1;
    if (std::fabs(value + p.max_val) <= tol) return 0;
  } else {
    const double level = std::round(value / p.step());
    if (level >= 0.0 && level <= static_cast<double>(p.max_code()) &&
        std::fabs(value - level * p.step()) <= tol)
      return static_cast<std::uint32_t>(level);
  }
  std::ostringstream os;
  os.precision(17);
  os << "value " << value << " is not on the " << p.bit_width << "-bit grid (max_val "
     << p.max_val << ")";
  throw Error(ErrorKind::OffGrid, os.str());
}

std::string code_to_bits(std::uint64_t code, int width) {
  std::string bits(static_cast<std::size_t>(width), '0');
  for (int i = 0; i < width; ++i)
    if ((code >> (width - 1 - i)) & 1u) bits[static_cast<std::size_t>(i)] = '1';
  return bits;
}

std::uint64_t bits_to_code(const std::string& bits) {
  std::uint64_t code = 0;
  for (char c : bits) {
    if (c != '0' && c != '1') throw Error(ErrorKind::Parse, "bit string contains '" + std::string(1, c) + "'");
    code = (code << 1) | static_cast<std::uint64_t>(c == '1');
  }
  return code;
}

}  // namespace lutnet
