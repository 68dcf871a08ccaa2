#include <algorithm>
#include <cmath>

#include "cmda/rng.hpp"
#include "doctest.h"

using namespace cmda;

TEST_CASE("uniform01 is a pure function of its keys") {
  const double a = uniform01(7, Stream::Masking, 3ull, 5ull);
  const double b = uniform01(7, Stream::Masking, 3ull, 5ull);
  CHECK(a == b);
  CHECK(a >= 0.0);
  CHECK(a < 1.0);
  CHECK(uniform01(7, Stream::Masking, 3ull, 5ull) !=
        uniform01(7, Stream::Dropout, 3ull, 5ull));
  CHECK(uniform01(7, Stream::Masking, 3ull, 5ull) !=
        uniform01(8, Stream::Masking, 3ull, 5ull));
}

TEST_CASE("hash_u64 is order sensitive") {
  CHECK(hash_u64(1ull, 2ull, 3ull) != hash_u64(1ull, 3ull, 2ull));
  CHECK(hash_u64(0ull, 0ull) != hash_u64(0ull, 1ull));
}

TEST_CASE("counter rng draws stay in range and look uniform") {
  CounterRng rng(42, Stream::Synth, 0);
  double sum = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("below never reaches its bound") {
  CounterRng rng(9, Stream::Synth, 1);
  for (int i = 0; i < 5000; ++i) CHECK(rng.below(7) < 7);
  // All residues show up.
  CounterRng rng2(9, Stream::Synth, 2);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 5000; ++i) ++seen[static_cast<std::size_t>(rng2.below(7))];
  for (int c : seen) CHECK(c > 0);
}

TEST_CASE("normal draws have the right first two moments") {
  CounterRng rng(3, Stream::Synth, 0);
  const int n = 40000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle permutes deterministically per key") {
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<int> a = v, b = v, c = v;
  {
    CounterRng r(5, Stream::DataOrder, 0);
    shuffle(a, r);
  }
  {
    CounterRng r(5, Stream::DataOrder, 0);
    shuffle(b, r);
  }
  {
    CounterRng r(5, Stream::DataOrder, 1);
    shuffle(c, r);
  }
  CHECK(a == b);
  CHECK(a != c);  // one chance in 10! of a false failure
  std::vector<int> sorted_a = a;
  std::sort(sorted_a.begin(), sorted_a.end());
  CHECK(sorted_a == v);
}
