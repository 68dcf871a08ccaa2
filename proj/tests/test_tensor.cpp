#include <cmath>

#include "cmda/tensor.hpp"
#include "doctest.h"

using namespace cmda;

TEST_CASE("construction and layout") {
  Tensor<double> t({2, 3});
  CHECK(t.numel() == 6);
  for (Index i = 0; i < 6; ++i) CHECK(t[i] == 0.0);

  Tensor<double> u({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(u.at(0, 0) == 1.0);
  CHECK(u.at(1, 2) == 6.0);
  CHECK(u[1 * 3 + 2] == 6.0);  // row-major

  CHECK_THROWS_AS(Tensor<double>({2, 3}, {1, 2}), std::invalid_argument);
}

TEST_CASE("factories") {
  auto f = Tensor<float>::full({4}, 2.5f);
  for (Index i = 0; i < 4; ++i) CHECK(f[i] == 2.5f);
  auto s = Tensor<double>::scalar(7.0);
  CHECK(s.numel() == 1);
  CHECK(s[0] == 7.0);
}

TEST_CASE("eigen views alias the storage") {
  Tensor<double> t({2, 2}, {1, 2, 3, 4});
  auto m = t.mat(2, 2);
  CHECK(m(0, 1) == 2.0);
  CHECK(m(1, 0) == 3.0);
  m(1, 0) = 9.0;
  CHECK(t.at(1, 0) == 9.0);

  Tensor<double> r3({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(r3.slice(1)(0, 0) == 5.0);
  CHECK(r3.slice(1)(1, 1) == 8.0);
  CHECK(r3.mat2d().rows() == 4);
  CHECK(r3.mat2d().cols() == 2);
}

TEST_CASE("reshape preserves data") {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> r = t.reshaped({3, 2});
  CHECK(r.at(2, 1) == 6.0);
  CHECK_THROWS_AS(t.reshaped({4, 2}), std::invalid_argument);
}

TEST_CASE("all_finite flags bad values") {
  Tensor<double> t({3}, {1, 2, 3});
  CHECK(t.all_finite());
  t[1] = std::nan("");
  CHECK(!t.all_finite());
  t[1] = std::numeric_limits<double>::infinity();
  CHECK(!t.all_finite());
}
