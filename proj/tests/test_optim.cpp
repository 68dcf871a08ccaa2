#include <cmath>

#include "cmda/optim.hpp"
#include "doctest.h"

using namespace cmda;

namespace {

ParamStore<double> one_param(double v) {
  ParamStore<double> ps;
  ps.add("w", Tensor<double>({1}, {v}));
  return ps;
}

}  // namespace

TEST_CASE("adam first steps match the closed form for a constant gradient") {
  // With bias correction, a constant gradient g gives an update of exactly
  // lr * g / (|g| + eps) on every step.
  auto ps = one_param(1.0);
  auto st = AdamState<double>::init(ps);
  const double lr = 0.01;
  std::vector<Tensor<double>> g{Tensor<double>({1}, {0.5})};
  adam_step(ps, g, st, lr);
  CHECK(ps.tensor(0)[0] == doctest::Approx(1.0 - lr * 0.5 / (0.5 + 1e-9)).epsilon(1e-12));
  adam_step(ps, g, st, lr);
  CHECK(ps.tensor(0)[0] ==
        doctest::Approx(1.0 - 2 * lr * 0.5 / (0.5 + 1e-9)).epsilon(1e-10));
  CHECK(st.t == 2);
}

TEST_CASE("adam trace matches an independent reference implementation") {
  auto ps = one_param(0.3);
  auto st = AdamState<double>::init(ps);
  const double lr = 0.05, b1 = 0.9, b2 = 0.98, eps = 1e-9;
  const std::vector<double> grads{0.4, -1.2, 0.07, 2.5, -0.3};

  double w = 0.3, m = 0, v = 0;
  for (std::size_t t = 0; t < grads.size(); ++t) {
    std::vector<Tensor<double>> g{Tensor<double>({1}, {grads[t]})};
    adam_step(ps, g, st, lr);

    m = b1 * m + (1 - b1) * grads[t];
    v = b2 * v + (1 - b2) * grads[t] * grads[t];
    const double mhat = m / (1 - std::pow(b1, static_cast<double>(t + 1)));
    const double vhat = v / (1 - std::pow(b2, static_cast<double>(t + 1)));
    w -= lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(ps.tensor(0)[0] == doctest::Approx(w).epsilon(1e-12));
  }
}

TEST_CASE("adam leaves parameters alone on zero gradients") {
  auto ps = one_param(2.0);
  auto st = AdamState<double>::init(ps);
  std::vector<Tensor<double>> g{Tensor<double>({1}, {0.0})};
  adam_step(ps, g, st, 0.1);
  CHECK(ps.tensor(0)[0] == 2.0);
}

TEST_CASE("adam rejects non-finite gradients by name") {
  auto ps = one_param(1.0);
  auto st = AdamState<double>::init(ps);
  std::vector<Tensor<double>> g{Tensor<double>({1}, {std::nan("")})};
  CHECK_THROWS_WITH_AS(adam_step(ps, g, st, 0.1),
                       doctest::Contains("w"), NumericError);
}

TEST_CASE("inverse sqrt schedule peaks at warmup") {
  const long warmup = 40;
  const long d = 64;
  const double peak = lr_inverse_sqrt(warmup, warmup, d);
  CHECK(peak == doctest::Approx(std::pow(64.0, -0.5) * std::pow(40.0, -0.5)).epsilon(1e-12));
  CHECK(lr_inverse_sqrt(1, warmup, d) < lr_inverse_sqrt(20, warmup, d));
  CHECK(lr_inverse_sqrt(20, warmup, d) < peak);
  CHECK(lr_inverse_sqrt(80, warmup, d) < peak);
  CHECK(lr_inverse_sqrt(80, warmup, d) ==
        doctest::Approx(std::pow(64.0, -0.5) * std::pow(80.0, -0.5)).epsilon(1e-12));
  CHECK_THROWS_AS(lr_inverse_sqrt(0, warmup, d), std::invalid_argument);
}

TEST_CASE("triangular schedule ramps to the peak then decays to zero") {
  const double eta = 3e-4;
  CHECK(lr_triangular(10, 100, eta) == doctest::Approx(eta).epsilon(1e-15));
  CHECK(lr_triangular(1, 100, eta) == doctest::Approx(eta / 10).epsilon(1e-15));
  CHECK(lr_triangular(55, 100, eta) == doctest::Approx(eta / 2).epsilon(1e-12));
  CHECK(lr_triangular(100, 100, eta) == 0.0);
  CHECK(lr_triangular(1, 1, eta) == doctest::Approx(eta).epsilon(1e-15));
  CHECK_THROWS_AS(lr_triangular(0, 100, eta), std::invalid_argument);
  CHECK_THROWS_AS(lr_triangular(101, 100, eta), std::invalid_argument);
}

TEST_CASE("xavier and normal init are deterministic and bounded") {
  Tensor<double> w({8, 4});
  CounterRng rng(5, Stream::Init, 0);
  init_xavier(w, rng);
  const double limit = std::sqrt(6.0 / 12.0);
  bool nonzero = false;
  for (Index i = 0; i < w.numel(); ++i) {
    CHECK(std::abs(w[i]) <= limit);
    nonzero = nonzero || w[i] != 0.0;
  }
  CHECK(nonzero);
  Tensor<double> w2({8, 4});
  CounterRng rng2(5, Stream::Init, 0);
  init_xavier(w2, rng2);
  for (Index i = 0; i < w.numel(); ++i) CHECK(w[i] == w2[i]);
}
