#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cmda/errors.hpp"
#include "cmda/graph.hpp"
#include "cmda/rng.hpp"

namespace cmda {

// Named parameter tensors; Adam state is kept index-aligned with this.
template <typename S>
class ParamStore {
 public:
  Index add(std::string name, Tensor<S> t) {
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(t));
    return static_cast<Index>(tensors_.size()) - 1;
  }
  Index size() const { return static_cast<Index>(tensors_.size()); }
  const std::string& name(Index i) const { return names_[static_cast<std::size_t>(i)]; }
  Tensor<S>& tensor(Index i) { return tensors_[static_cast<std::size_t>(i)]; }
  const Tensor<S>& tensor(Index i) const { return tensors_[static_cast<std::size_t>(i)]; }
  Index find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<Index>(i);
    return -1;
  }
  Index total_params() const {
    Index n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<S>> tensors_;
};

template <typename S>
struct AdamState {
  S beta1 = S(0.9);
  S beta2 = S(0.98);
  S eps = S(1e-9);
  long t = 0;
  std::vector<Tensor<S>> m, v;

  static AdamState init(const ParamStore<S>& params, S beta1 = S(0.9),
                        S beta2 = S(0.98), S eps = S(1e-9)) {
    AdamState st;
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.eps = eps;
    for (Index i = 0; i < params.size(); ++i) {
      st.m.emplace_back(params.tensor(i).shape());
      st.v.emplace_back(params.tensor(i).shape());
    }
    return st;
  }
};

// Bias-corrected Adam over the whole store. Gradients must align with the
// store; a non-finite gradient aborts with the offending parameter's name.
template <typename S>
void adam_step(ParamStore<S>& params, const std::vector<Tensor<S>>& grads,
               AdamState<S>& state, S lr) {
  if (static_cast<Index>(grads.size()) != params.size())
    throw std::invalid_argument("adam_step: gradient count mismatch");
  state.t += 1;
  const S bc1 = S(1) - std::pow(state.beta1, S(state.t));
  const S bc2 = S(1) - std::pow(state.beta2, S(state.t));
  for (Index i = 0; i < params.size(); ++i) {
    const Tensor<S>& gt = grads[static_cast<std::size_t>(i)];
    if (!gt.all_finite())
      throw NumericError("non-finite gradient for parameter " + params.name(i));
    Tensor<S>& p = params.tensor(i);
    Tensor<S>& m = state.m[static_cast<std::size_t>(i)];
    Tensor<S>& v = state.v[static_cast<std::size_t>(i)];
    m.arr() = state.beta1 * m.arr() + (S(1) - state.beta1) * gt.arr();
    v.arr() = state.beta2 * v.arr() + (S(1) - state.beta2) * gt.arr().square();
    p.arr() -= lr * (m.arr() / bc1) / ((v.arr() / bc2).sqrt() + state.eps);
  }
}

// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
inline double lr_inverse_sqrt(long step, long warmup, long d_model) {
  if (step < 1) throw std::invalid_argument("lr_inverse_sqrt: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

// Linear warmup to eta over the first 10% of total_steps, linear decay to 0.
inline double lr_triangular(long step, long total_steps, double eta) {
  if (step < 1 || step > total_steps)
    throw std::invalid_argument("lr_triangular: step outside [1, total_steps]");
  const long warm = std::max<long>(1, (total_steps + 9) / 10);
  if (step <= warm) return eta * static_cast<double>(step) / static_cast<double>(warm);
  if (total_steps == warm) return eta;
  return eta * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warm);
}

// Compares the tape gradient against central finite differences and returns
// the max relative error over coordinates (denominator floored at 1e-3 so
// near-zero coordinates compare absolutely). `build` maps a leaf var to a
// scalar loss var on the given graph.
template <typename S, typename F>
S grad_check(F&& build, const Tensor<S>& point, S h) {
  std::vector<S> analytic;
  {
    Graph<S> g;
    Var<S> x = g.leaf(point, true);
    Var<S> loss = build(g, x);
    g.backward(loss);
    const Tensor<S>& gx = x.grad();
    analytic.assign(gx.data(), gx.data() + gx.numel());
  }
  auto eval = [&](const Tensor<S>& p) -> S {
    Graph<S> g;
    Var<S> x = g.leaf(p, false);
    Var<S> loss = build(g, x);
    return loss.value()[0];
  };
  S max_err = S(0);
  Tensor<S> p = point;
  for (Index i = 0; i < p.numel(); ++i) {
    const S orig = p[i];
    p[i] = orig + h;
    const S fp = eval(p);
    p[i] = orig - h;
    const S fm = eval(p);
    p[i] = orig;
    const S numeric = (fp - fm) / (S(2) * h);
    const S a = analytic[static_cast<std::size_t>(i)];
    const S denom = std::max({std::abs(a), std::abs(numeric), S(1e-3)});
    max_err = std::max(max_err, std::abs(a - numeric) / denom);
  }
  return max_err;
}

// Xavier-uniform for weight matrices, zeros/ones for biases and gains,
// scaled normal for embeddings; all drawn from the Init substream.
template <typename S>
void init_xavier(Tensor<S>& w, CounterRng& rng) {
  const Index fan_in = w.rank() >= 2 ? w.dim(0) : w.numel();
  const Index fan_out = w.rank() >= 2 ? w.dim(w.rank() - 1) : 1;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Index i = 0; i < w.numel(); ++i)
    w[i] = static_cast<S>((rng.uniform() * 2.0 - 1.0) * limit);
}

template <typename S>
void init_normal(Tensor<S>& w, CounterRng& rng, double stddev) {
  for (Index i = 0; i < w.numel(); ++i)
    w[i] = static_cast<S>(rng.normal() * stddev);
}

}  // namespace cmda
