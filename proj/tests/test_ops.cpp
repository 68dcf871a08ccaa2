#include <cmath>
#include <vector>

#include "cmda/ops.hpp"
#include "cmda/optim.hpp"
#include "doctest.h"

using namespace cmda;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t key, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  CounterRng rng(1234, Stream::Synth, key);
  for (Index i = 0; i < t.numel(); ++i) t[i] = (rng.uniform() * 2 - 1) * scale;
  return t;
}

// Reference softmax in long double for oracle comparisons.
std::vector<double> softmax_oracle(const std::vector<double>& row) {
  long double mx = row[0];
  for (double v : row) mx = std::max<long double>(mx, v);
  long double z = 0;
  std::vector<long double> e(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(row[i]) - mx);
    z += e[i];
  }
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i)
    out[i] = static_cast<double>(e[i] / z);
  return out;
}

}  // namespace

TEST_CASE("matmul matches hand values and a per-slice oracle") {
  Graph<double> g;
  auto a = g.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}), false);
  auto b = g.leaf(Tensor<double>({2, 2}, {5, 6, 7, 8}), false);
  auto c = matmul(a, b);
  CHECK(c.value().at(0, 0) == doctest::Approx(19));
  CHECK(c.value().at(0, 1) == doctest::Approx(22));
  CHECK(c.value().at(1, 0) == doctest::Approx(43));
  CHECK(c.value().at(1, 1) == doctest::Approx(50));

  // Batched (B,m,k) x (k,n) equals slice-by-slice products.
  auto A = random_tensor({3, 2, 4}, 1);
  auto W = random_tensor({4, 5}, 2);
  Graph<double> g2;
  auto ab = matmul(g2.leaf(A, false), g2.leaf(W, false));
  for (Index s = 0; s < 3; ++s) {
    Tensor<double> ref({2, 5});
    ref.mat(2, 5) = A.slice(s) * W.mat(4, 5);
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 5; ++j)
        CHECK(ab.value().at(s, i, j) == doctest::Approx(ref.at(i, j)).epsilon(1e-12));
  }

  // Batched (B,m,k) x (B,k,n) likewise.
  auto B2 = random_tensor({3, 4, 5}, 3);
  Graph<double> g3;
  auto ab2 = matmul(g3.leaf(A, false), g3.leaf(B2, false));
  for (Index s = 0; s < 3; ++s) {
    Tensor<double> ref({2, 5});
    ref.mat(2, 5) = A.slice(s) * B2.slice(s);
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 5; ++j)
        CHECK(ab2.value().at(s, i, j) == doctest::Approx(ref.at(i, j)).epsilon(1e-12));
  }
}

TEST_CASE("matmul gradients pass finite differences") {
  auto W = random_tensor({4, 3}, 10);
  auto X = random_tensor({2, 4}, 11);
  const double tol = 1e-6;
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) {
              return mean_all(matmul(x, g.constant(W)));
            },
            X, 1e-5) < tol);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> w) {
              return mean_all(matmul(g.constant(X), w));
            },
            W, 1e-5) < tol);

  auto A3 = random_tensor({2, 3, 4}, 12);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> a) {
              return mean_all(matmul(a, g.constant(W)));
            },
            A3, 1e-5) < tol);
  auto B3 = random_tensor({2, 4, 3}, 13);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> b) {
              return mean_all(matmul(g.constant(A3), b));
            },
            B3, 1e-5) < tol);
}

TEST_CASE("transpose2 on matrices and batches") {
  Graph<double> g;
  auto t = transpose2(g.leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}), false));
  CHECK(t.value().at(0, 1) == 4.0);
  CHECK(t.value().at(2, 0) == 3.0);
  auto X = random_tensor({2, 3, 4}, 20);
  CHECK(grad_check<double>(
            [&](Graph<double>& gg, Var<double> x) { return mean_all(transpose2(x)); },
            X, 1e-5) < 1e-6);
}

TEST_CASE("elementwise and broadcast arithmetic") {
  auto X = random_tensor({2, 3}, 30);
  auto Y = random_tensor({2, 3}, 31);
  auto B = random_tensor({3}, 32);
  const double tol = 1e-6;
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) { return mean_all(x + g.constant(Y)); },
            X, 1e-5) < tol);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) { return mean_all(x * g.constant(Y)); },
            X, 1e-5) < tol);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) { return mean_all(x - g.constant(Y)); },
            X, 1e-5) < tol);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) { return mean_all(scale(x, 2.5)); },
            X, 1e-5) < tol);
  // Suffix broadcast: bias over rows, and gradient into the bias.
  Graph<double> g;
  auto sum = g.leaf(X, false) + g.leaf(B, false);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j)
      CHECK(sum.value().at(i, j) == doctest::Approx(X.at(i, j) + B[j]));
  CHECK(grad_check<double>(
            [&](Graph<double>& gg, Var<double> b) { return mean_all(gg.constant(X) + b); },
            B, 1e-5) < tol);
  // (B,L,d) + (L,d) broadcast, the positional-encoding pattern.
  auto X3 = random_tensor({2, 3, 4}, 33);
  auto P = random_tensor({3, 4}, 34);
  CHECK(grad_check<double>(
            [&](Graph<double>& gg, Var<double> x) { return mean_all(x + gg.constant(P)); },
            X3, 1e-5) < tol);
}

TEST_CASE("relu values and gradient") {
  Graph<double> g;
  auto y = relu(g.leaf(Tensor<double>({4}, {-1, 0, 0.5, 2}), false));
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == 0.0);
  CHECK(y.value()[2] == 0.5);
  CHECK(y.value()[3] == 2.0);
  // Stay away from the kink for finite differences.
  Tensor<double> X({5}, {-2.0, -0.7, 0.3, 1.1, 2.4});
  CHECK(grad_check<double>(
            [&](Graph<double>& gg, Var<double> x) { return mean_all(relu(x)); }, X,
            1e-5) < 1e-6);
}

TEST_CASE("softmax matches a high-precision oracle") {
  Graph<double> g;
  auto y = softmax(g.leaf(Tensor<double>({1, 2}, {0, 0}), false));
  CHECK(y.value()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y.value()[1] == doctest::Approx(0.5).epsilon(1e-15));

  auto X = random_tensor({3, 6}, 40, 4.0);
  Graph<double> g2;
  auto sm = softmax(g2.leaf(X, false));
  for (Index r = 0; r < 3; ++r) {
    std::vector<double> row(6);
    for (Index j = 0; j < 6; ++j) row[static_cast<std::size_t>(j)] = X.at(r, j);
    const auto ref = softmax_oracle(row);
    double sum = 0;
    for (Index j = 0; j < 6; ++j) {
      CHECK(sm.value().at(r, j) ==
            doctest::Approx(ref[static_cast<std::size_t>(j)]).epsilon(1e-13));
      sum += sm.value().at(r, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-13));
  }

  // Shift invariance.
  Tensor<double> shifted = X;
  for (Index i = 0; i < shifted.numel(); ++i) shifted[i] += 100.0;
  Graph<double> g3;
  auto sm2 = softmax(g3.leaf(shifted, false));
  for (Index i = 0; i < X.numel(); ++i)
    CHECK(sm2.value()[i] == doctest::Approx(sm.value()[i]).epsilon(1e-12));
}

TEST_CASE("softmax over a non-trailing axis equals transpose oracle") {
  auto X = random_tensor({2, 3}, 41, 2.0);
  Graph<double> g;
  auto a0 = softmax(g.leaf(X, false), 0);
  for (Index j = 0; j < 3; ++j) {
    std::vector<double> col{X.at(0, j), X.at(1, j)};
    const auto ref = softmax_oracle(col);
    CHECK(a0.value().at(0, j) == doctest::Approx(ref[0]).epsilon(1e-13));
    CHECK(a0.value().at(1, j) == doctest::Approx(ref[1]).epsilon(1e-13));
  }
}

TEST_CASE("softmax gradient") {
  auto X = random_tensor({2, 4}, 42, 2.0);
  auto C = random_tensor({2, 4}, 43);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) {
              return mean_all(softmax(x) * g.constant(C));
            },
            X, 1e-5) < 1e-6);
}

TEST_CASE("log_softmax agrees with log of softmax") {
  auto X = random_tensor({3, 5}, 44, 3.0);
  Graph<double> g;
  auto ls = log_softmax(g.leaf(X, false));
  auto sm = softmax(g.leaf(X, false));
  for (Index i = 0; i < X.numel(); ++i)
    CHECK(ls.value()[i] == doctest::Approx(std::log(sm.value()[i])).epsilon(1e-11));
  auto C = random_tensor({3, 5}, 45);
  CHECK(grad_check<double>(
            [&](Graph<double>& gg, Var<double> x) {
              return mean_all(log_softmax(x) * gg.constant(C));
            },
            X, 1e-5) < 1e-6);
}

TEST_CASE("add_mask removes keys from attention") {
  Tensor<double> mask({1, 1, 3}, {0, 0, -std::numeric_limits<double>::infinity()});
  auto X = random_tensor({2, 2, 3}, 46);
  Graph<double> g;
  auto probs = softmax(add_mask(g.leaf(X, false), mask));
  for (Index b = 0; b < 2; ++b)
    for (Index q = 0; q < 2; ++q) {
      CHECK(probs.value().at(b, q, 2) == 0.0);
      CHECK(probs.value().at(b, q, 0) + probs.value().at(b, q, 1) ==
            doctest::Approx(1.0).epsilon(1e-12));
    }
  // Gradient flows through the surviving entries.
  Tensor<double> zero_mask({1, 1, 3});
  CHECK(grad_check<double>(
            [&](Graph<double>& gg, Var<double> x) {
              return mean_all(softmax(add_mask(x, zero_mask)));
            },
            X, 1e-5) < 1e-6);
}

TEST_CASE("layer_norm standardizes rows and passes grad check") {
  auto X = random_tensor({4, 6}, 50, 2.0);
  Graph<double> g;
  auto gain = g.leaf(Tensor<double>::full({6}, 1.0), false);
  auto bias = g.leaf(Tensor<double>({6}), false);
  auto y = layer_norm(g.leaf(X, false), gain, bias);
  for (Index r = 0; r < 4; ++r) {
    double mean = 0, var = 0;
    for (Index j = 0; j < 6; ++j) mean += y.value().at(r, j);
    mean /= 6;
    for (Index j = 0; j < 6; ++j) {
      const double d = y.value().at(r, j) - mean;
      var += d * d;
    }
    var /= 6;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(std::abs(var - 1.0) < 1e-3);  // eps shifts variance slightly below 1
  }

  auto G = random_tensor({6}, 51);
  auto Bs = random_tensor({6}, 52);
  CHECK(grad_check<double>(
            [&](Graph<double>& gg, Var<double> x) {
              return mean_all(
                  layer_norm(x, gg.constant(G), gg.constant(Bs)));
            },
            X, 1e-5) < 1e-5);
  CHECK(grad_check<double>(
            [&](Graph<double>& gg, Var<double> gn) {
              return mean_all(layer_norm(gg.constant(X), gn, gg.constant(Bs)));
            },
            G, 1e-5) < 1e-6);
  CHECK(grad_check<double>(
            [&](Graph<double>& gg, Var<double> bs) {
              return mean_all(layer_norm(gg.constant(X), gg.constant(G), bs));
            },
            Bs, 1e-5) < 1e-6);
}

TEST_CASE("dropout is identity in eval and a scaled mask in training") {
  auto X = random_tensor({4, 8}, 60);
  {
    Graph<double> g;  // eval mode by default
    auto y = dropout(g.leaf(X, false), 0.5, 1);
    for (Index i = 0; i < X.numel(); ++i) CHECK(y.value()[i] == X[i]);
  }
  Graph<double> g;
  g.opts.training = true;
  g.opts.seed = 11;
  g.opts.step = 3;
  auto x = g.leaf(X, true);
  auto y = dropout(x, 0.5, 1);
  int kept = 0;
  for (Index i = 0; i < X.numel(); ++i) {
    const double v = y.value()[i];
    const bool is_zero = v == 0.0;
    const bool is_scaled = std::abs(v - X[i] / 0.5) < 1e-12;
    CHECK((is_zero || is_scaled));
    kept += is_scaled ? 1 : 0;
  }
  CHECK(kept > 0);
  CHECK(kept < X.numel());

  // Same keys, same mask; backward applies the identical mask.
  Graph<double> g2;
  g2.opts.training = true;
  g2.opts.seed = 11;
  g2.opts.step = 3;
  auto y2 = dropout(g2.leaf(X, true), 0.5, 1);
  for (Index i = 0; i < X.numel(); ++i) CHECK(y2.value()[i] == y.value()[i]);

  auto loss = sum_all(y);
  g.backward(loss);
  for (Index i = 0; i < X.numel(); ++i) {
    const double expect = y.value()[i] == 0.0 ? 0.0 : 2.0;
    CHECK(x.grad()[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("gather select scatter slice concat") {
  auto E = random_tensor({5, 3}, 70);
  {
    Graph<double> g;
    auto rows = gather_rows(g.leaf(E, false), std::vector<int>{4, 0, 4});
    CHECK(rows.value().at(0, 1) == E.at(4, 1));
    CHECK(rows.value().at(1, 2) == E.at(0, 2));
    CHECK(rows.value().at(2, 0) == E.at(4, 0));
  }
  // Repeated ids accumulate gradient.
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> e) {
              return mean_all(gather_rows(e, std::vector<int>{4, 0, 4}));
            },
            E, 1e-5) < 1e-6);

  auto X = random_tensor({4, 3}, 71);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) {
              return mean_all(select_rows(x, std::vector<Index>{2, 1}));
            },
            X, 1e-5) < 1e-6);

  auto R = random_tensor({2, 3}, 72);
  {
    Graph<double> g;
    auto y = scatter_rows(g.leaf(X, false), std::vector<Index>{3, 0},
                          g.leaf(R, false));
    for (Index j = 0; j < 3; ++j) {
      CHECK(y.value().at(3, j) == R.at(0, j));
      CHECK(y.value().at(0, j) == R.at(1, j));
      CHECK(y.value().at(1, j) == X.at(1, j));
      CHECK(y.value().at(2, j) == X.at(2, j));
    }
    CHECK_THROWS_AS(scatter_rows(g.leaf(X, false), std::vector<Index>{1, 1},
                                 g.leaf(R, false)),
                    std::invalid_argument);
  }
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) {
              return mean_all(scatter_rows(x, std::vector<Index>{3, 0}, g.constant(R)));
            },
            X, 1e-5) < 1e-6);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> r) {
              return mean_all(scatter_rows(g.constant(X), std::vector<Index>{3, 0}, r));
            },
            R, 1e-5) < 1e-6);

  auto X3 = random_tensor({2, 3, 6}, 73);
  {
    Graph<double> g;
    auto part = slice_last(g.leaf(X3, false), 2, 3);
    CHECK(part.value().at(1, 2, 0) == X3.at(1, 2, 2));
  }
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) {
              return mean_all(slice_last(x, 2, 3));
            },
            X3, 1e-5) < 1e-6);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) {
              std::vector<Var<double>> parts{slice_last(x, 0, 2), slice_last(x, 2, 4)};
              return mean_all(concat_last(parts) * g.constant(random_tensor({2, 3, 6}, 74)));
            },
            X3, 1e-5) < 1e-6);
}

TEST_CASE("reshape and reductions") {
  auto X = random_tensor({2, 6}, 80);
  Graph<double> g;
  auto r = reshape(g.leaf(X, false), {3, 4});
  CHECK(r.value().at(2, 3) == X[11]);
  CHECK(grad_check<double>(
            [&](Graph<double>& gg, Var<double> x) {
              return sum_all(reshape(x, {3, 4}) * gg.constant(random_tensor({3, 4}, 81)));
            },
            X, 1e-5) < 1e-6);
  Graph<double> g2;
  auto m = mean_all(g2.leaf(X, false));
  double ref = 0;
  for (Index i = 0; i < X.numel(); ++i) ref += X[i];
  CHECK(m.value()[0] == doctest::Approx(ref / X.numel()).epsilon(1e-12));
}

TEST_CASE("cross entropy equals an independent reference") {
  // Uniform logits: loss is exactly ln(vocab).
  Graph<double> g;
  auto logits = g.leaf(Tensor<double>({2, 4}), false);
  auto loss = cross_entropy(logits, std::vector<int>{1, 3}, 0.0, -1);
  CHECK(loss.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-13));

  // Smoothed loss against a brute-force oracle.
  auto X = random_tensor({3, 5}, 90, 2.5);
  const std::vector<int> labels{2, 0, 4};
  const double eps = 0.1;
  long double ref = 0;
  for (Index r = 0; r < 3; ++r) {
    std::vector<double> row(5);
    for (Index j = 0; j < 5; ++j) row[static_cast<std::size_t>(j)] = X.at(r, j);
    const auto p = softmax_oracle(row);
    long double row_loss = 0;
    for (Index j = 0; j < 5; ++j) {
      const long double q =
          (j == labels[static_cast<std::size_t>(r)] ? 1.0 - eps : 0.0) + eps / 5.0;
      row_loss -= q * std::log(static_cast<long double>(p[static_cast<std::size_t>(j)]));
    }
    ref += row_loss;
  }
  ref /= 3;
  Graph<double> g2;
  auto sl = cross_entropy(g2.leaf(X, false), labels, eps, -1);
  CHECK(sl.value()[0] == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
}

TEST_CASE("cross entropy ignores pad rows and rejects empty targets") {
  auto X = random_tensor({4, 5}, 91, 2.0);
  // Rows 1 and 3 are ignored; loss must equal the two-row version.
  Graph<double> g;
  auto full = cross_entropy(g.leaf(X, false), std::vector<int>{2, 0, 4, 0}, 0.1, 0);
  Tensor<double> kept({2, 5});
  for (Index j = 0; j < 5; ++j) {
    kept.at(0, j) = X.at(0, j);
    kept.at(1, j) = X.at(2, j);
  }
  Graph<double> g2;
  auto two = cross_entropy(g2.leaf(kept, false), std::vector<int>{2, 4}, 0.1, 0);
  CHECK(full.value()[0] == doctest::Approx(two.value()[0]).epsilon(1e-12));

  Graph<double> g3;
  CHECK_THROWS_AS(
      cross_entropy(g3.leaf(X, false), std::vector<int>{0, 0, 0, 0}, 0.0, 0),
      DataError);
}

TEST_CASE("cross entropy gradient with smoothing and ignored rows") {
  auto X = random_tensor({4, 5}, 92, 2.0);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) {
              return cross_entropy(x, std::vector<int>{2, 0, 4, 1}, 0.1, -1);
            },
            X, 1e-5) < 1e-6);
  CHECK(grad_check<double>(
            [&](Graph<double>& g, Var<double> x) {
              return cross_entropy(x, std::vector<int>{2, 0, 4, 0}, 0.1, 0);
            },
            X, 1e-5) < 1e-6);
}

TEST_CASE("backward accumulates across shared subexpressions") {
  // f(x) = sum(x * x) via two uses of the same var: df/dx = 2x.
  Tensor<double> X({3}, {1.0, -2.0, 0.5});
  Graph<double> g;
  auto x = g.leaf(X, true);
  auto loss = sum_all(x * x);
  g.backward(loss);
  for (Index i = 0; i < 3; ++i)
    CHECK(x.grad()[i] == doctest::Approx(2 * X[i]).epsilon(1e-12));
}

TEST_CASE("grad_check itself: x squared at 3") {
  Tensor<double> X({1}, {3.0});
  const double err = grad_check<double>(
      [&](Graph<double>& g, Var<double> x) { return sum_all(x * x); }, X, 1e-5);
  CHECK(err < 1e-8);
}
