#include <doctest.h>

#include <array>
#include <cmath>
#include <set>
#include <vector>

#include "lmmtc/prng.hpp"

using namespace lmmtc;

TEST_CASE("matches the pcg32 reference sequence") {
  // pcg32-demo output for pcg32_srandom_r(42, 54)
  Pcg32 rng(42, 54);
  const std::array<std::uint32_t, 6> expected = {0xa15c02b7, 0x7b47f409, 0xba1d3330,
                                                 0x83d2f293, 0xbfa4784b, 0xcbed606e};
  for (auto e : expected) CHECK(rng.next_u32() == e);
}

TEST_CASE("identical seed and stream give identical draws") {
  Pcg32 a(9, 3), b(9, 3);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
    CHECK(a.below(17) == b.below(17));
  }
}

TEST_CASE("purposes map to distinct streams") {
  std::set<std::uint32_t> first;
  for (auto p : {Purpose::DataGen, Purpose::Init, Purpose::LabelMask, Purpose::Dropout, Purpose::TextMask}) {
    auto rng = make_stream(123, p);
    first.insert(rng.next_u32());
  }
  CHECK(first.size() == 5);
  CHECK(static_cast<int>(Purpose::DataGen) == 1);
  CHECK(static_cast<int>(Purpose::TextMask) == 5);
  CHECK(purpose_name(Purpose::LabelMask) == "label-mask");
}

TEST_CASE("derived draws stay in range") {
  Pcg32 rng(1, 1);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const int r = rng.range(-2, 3);
    CHECK((r >= -2 && r <= 3));
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("shuffle is a permutation") {
  Pcg32 rng(5, 1);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  rng.shuffle(std::span<int>(v));
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 50);
  CHECK(*s.begin() == 0);
  CHECK(*s.rbegin() == 49);
}
