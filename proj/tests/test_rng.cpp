#include <doctest.h>

#include "diffsteer/rng.hpp"

using namespace diffsteer;

TEST_CASE("splitmix64 reference sequence") {
  // Published output of the reference generator started from state 0.
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
  CHECK(splitmix64(0x9e3779b97f4a7c15ULL) == 0x6e789e6aa1b965f4ULL);
  CHECK(splitmix64(2 * 0x9e3779b97f4a7c15ULL) == 0x06c45d188009454fULL);
}

TEST_CASE("draws depend only on seed, stream and counter") {
  CounterRng a(5, 2), b(5, 2), c(5, 3), d(6, 2);
  const auto first = a.next_u64();
  CHECK(first == b.next_u64());
  CHECK(first != c.next_u64());
  CHECK(first != d.next_u64());
  CHECK(a.counter() == 1);
  CHECK(CounterRng(5, 2).normal_matrix(3, 4) == CounterRng(5, 2).normal_matrix(3, 4));
}

TEST_CASE("uniform, integer and normal draws") {
  CounterRng rng(11);
  const int n = 200000;
  double sum = 0.0, sq = 0.0, lo = 1.0, hi = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  CHECK(lo > 0.0);
  CHECK(hi < 1.0);
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));

  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);

  sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.01));
}
