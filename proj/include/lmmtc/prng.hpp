#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace lmmtc {

/// Stream ids; each source of randomness in a run draws from its own PCG32 stream.
enum class Purpose : std::uint64_t {
  DataGen = 1,
  Init = 2,
  LabelMask = 3,
  Dropout = 4,
  TextMask = 5,
};

std::string_view purpose_name(Purpose p);

/// PCG32 (XSH-RR output, 64-bit LCG state) following the reference pcg32_srandom_r seeding.
/// Every derived draw (uniform doubles, bounded ints, normals, shuffles) is implemented here
/// rather than through <random> distributions, so streams are reproducible across standard
/// libraries.
class Pcg32 {
 public:
  Pcg32(std::uint64_t seed, std::uint64_t stream);

  std::uint32_t next_u32();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint32_t below(std::uint32_t bound);

  /// Inclusive range [lo, hi].
  int range(int lo, int hi);

  bool bernoulli(double p) { return uniform() < p; }

  /// Box-Muller; the second variate of each pair is cached.
  double normal(double mean = 0.0, double stddev = 1.0);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = below(static_cast<std::uint32_t>(i));
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t state() const { return state_; }
  std::uint64_t increment() const { return inc_; }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Pcg32 make_stream(std::uint64_t seed, Purpose purpose) {
  return Pcg32(seed, static_cast<std::uint64_t>(purpose));
}

}  // namespace lmmtc
