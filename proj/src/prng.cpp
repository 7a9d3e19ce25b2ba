#include "lmmtc/prng.hpp"

#include <cmath>
#include <numbers>

#include "lmmtc/errors.hpp"

namespace lmmtc {

std::string_view purpose_name(Purpose p) {
  switch (p) {
    case Purpose::DataGen: return "data-gen";
    case Purpose::Init: return "init";
    case Purpose::LabelMask: return "label-mask";
    case Purpose::Dropout: return "dropout";
    case Purpose::TextMask: return "text-mask";
  }
  return "unknown";
}

namespace {
constexpr std::uint64_t kMultiplier = 6364136223846793005ULL;
}

Pcg32::Pcg32(std::uint64_t seed, std::uint64_t stream) {
  state_ = 0;
  inc_ = (stream << 1u) | 1u;
  next_u32();
  state_ += seed;
  next_u32();
}

std::uint32_t Pcg32::next_u32() {
  const std::uint64_t old = state_;
  state_ = old * kMultiplier + inc_;
  const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  const auto rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
}

double Pcg32::uniform() {
  const std::uint64_t hi = next_u32() >> 5;  // 27 bits
  const std::uint64_t lo = next_u32() >> 6;  // 26 bits
  return static_cast<double>((hi << 26) | lo) * 0x1.0p-53;
}

std::uint32_t Pcg32::below(std::uint32_t bound) {
  if (bound == 0) throw ContractError("Pcg32::below: bound must be positive");
  // Rejection on the low remainder keeps the draw unbiased.
  const std::uint32_t threshold = (-bound) % bound;
  for (;;) {
    const std::uint32_t r = next_u32();
    if (r >= threshold) return r % bound;
  }
}

int Pcg32::range(int lo, int hi) {
  if (hi < lo) throw ContractError("Pcg32::range: empty range");
  return lo + static_cast<int>(below(static_cast<std::uint32_t>(hi - lo + 1)));
}

double Pcg32::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(theta);
  has_spare_ = true;
  return mean + stddev * radius * std::cos(theta);
}

}  // namespace lmmtc
