#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "cmda/rng.hpp"
#include "cmda/tensor.hpp"

namespace cmda {

template <typename S>
class Graph;

// Lightweight handle into a Graph's tape.
template <typename S>
struct Var {
  Graph<S>* g = nullptr;
  int id = -1;

  const Tensor<S>& value() const { return g->value(id); }
  const Tensor<S>& grad() const { return g->grad(id); }
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return g != nullptr && id >= 0; }
};

// Reverse-mode tape. Nodes are appended in forward order, which is already a
// topological order, so backward() is a single reverse sweep visiting each
// node once. Gradients accumulate additively into per-node buffers.
template <typename S>
class Graph {
 public:
  struct Options {
    bool training = false;    // dropout active only when true
    std::uint64_t seed = 0;   // dropout substream root
    std::uint64_t step = 0;   // dropout substream key
  };

  Graph() = default;
  explicit Graph(Options opt) : opts(opt) {}

  Options opts;

  bool training() const { return opts.training; }
  std::uint64_t seed() const { return opts.seed; }
  std::uint64_t step() const { return opts.step; }

  Var<S> leaf(Tensor<S> v, bool requires_grad = true) {
    return {this, add_node(std::move(v), requires_grad, nullptr)};
  }
  Var<S> constant(Tensor<S> v) {
    return {this, add_node(std::move(v), false, nullptr)};
  }

  // Backward callbacks receive the graph and the node's own id.
  using BackFn = std::function<void(Graph&, int)>;

  int add_node(Tensor<S> v, bool requires_grad, BackFn back) {
    nodes_.push_back(Node{std::move(v), Tensor<S>(), requires_grad, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<S>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor<S>& mutable_value(int id) { return nodes_[static_cast<std::size_t>(id)].value; }

  bool requires_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }

  // Zero tensor until something accumulated into it.
  const Tensor<S>& grad(int id) const {
    Node& n = const_cast<Node&>(nodes_[static_cast<std::size_t>(id)]);
    if (n.grad.numel() == 0) n.grad = Tensor<S>(n.value.shape());
    return n.grad;
  }
  Tensor<S>& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.numel() == 0) n.grad = Tensor<S>(n.value.shape());
    return n.grad;
  }
  bool grad_nonzero(int id) const {
    return nodes_[static_cast<std::size_t>(id)].grad.numel() != 0;
  }

  void backward(Var<S> root) {
    if (root.g != this) throw std::invalid_argument("backward: foreign var");
    if (value(root.id).numel() != 1)
      throw std::invalid_argument("backward: root must be scalar");
    grad_buffer(root.id)[0] = S(1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back && n.grad.numel() != 0) n.back(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool requires_grad;
    BackFn back;
  };
  std::vector<Node> nodes_;
};

}  // namespace cmda
