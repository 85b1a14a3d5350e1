#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Var is a shared handle to a graph node. Ops record their parents and a
// backward closure when gradient recording is enabled and any input requires
// a gradient; otherwise they produce detached constants. Parameters are leaf
// nodes that persist across graphs and accumulate gradients until zeroed.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mdasr/tensor.hpp"

namespace mdasr {

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  bool is_leaf = false;
  bool touched = false;  // reached by backward() since the last zero_grad
  std::string name;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T{0});
  }
  void zero_grad() {
    std::fill(grad.begin(), grad.end(), T{0});
    touched = false;
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <typename T>
Var<T> parameter(Tensor<T> value, std::string name) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->is_leaf = true;
  n->name = std::move(name);
  n->ensure_grad();
  return n;
}

// Creates the result node of an op. Records parents and the backward closure
// only if recording is on and some parent needs a gradient. Throws
// NumericError if the value contains NaN or Inf.
template <typename T>
Var<T> make_result(const char* op, Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite value in output");
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  n->name = op;
  return n;
}

// Backpropagates from a scalar loss into every reachable node that requires a
// gradient. Throws if the loss was not produced by a recorded computation.
template <typename T>
void backward(const Var<T>& loss);

}  // namespace mdasr
