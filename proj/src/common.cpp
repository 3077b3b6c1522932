#include "lutnet/common.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lutnet {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidSpec: return "invalid-spec";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::VersionMismatch: return "version-mismatch";
    case ErrorKind::InvariantViolation: return "invariant-violation";
    case ErrorKind::WidthMismatch: return "width-mismatch";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::OffGrid: return "off-grid";
    case ErrorKind::LimitExceeded: return "limit-exceeded";
    case ErrorKind::MissingTable: return "missing-table";
    case ErrorKind::UnsupportedLayer: return "unsupported-layer";
    case ErrorKind::Training: return "training";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

// xoshiro256** seeded through splitmix64.
Rng::Rng(std::uint64_t seed) {
  std::uint64_t s = seed;
  for (auto& word : state_) word = splitmix64(s);
}

Rng Rng::derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = seed;
  std::uint64_t mix = splitmix64(h);
  for (std::uint64_t p : path) {
    std::uint64_t s = mix ^ (p + 0x632be59bd9b4e019ULL);
    mix = splitmix64(s);
  }
  return Rng(mix);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) return 0;
  const std::uint64_t limit = -bound % bound;  // 2^64 mod bound
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= limit) return r % bound;
  }
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

// Floyd's algorithm: exactly `count` draws regardless of n.
std::vector<int> Rng::sample_subset(int n, int count) {
  std::vector<int> chosen;
  chosen.reserve(static_cast<std::size_t>(count));
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  for (int j = n - count; j < n; ++j) {
    int t = static_cast<int>(below(static_cast<std::uint64_t>(j) + 1));
    if (taken[static_cast<std::size_t>(t)]) t = j;
    taken[static_cast<std::size_t>(t)] = 1;
    chosen.push_back(t);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

void Rng::shuffle(std::vector<int>& items) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = below(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace lutnet
