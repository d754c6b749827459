#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "crl/tensor.hpp"

namespace crl {

class Tape;

/// Handle into a Tape. Cheap to copy; only meaningful with its owning tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Backward rule: receives the tape and the node's own Var ("self").
using BackwardFn = std::function<void(Tape&, Var)>;

/// Reverse-mode autodiff tape.
///
/// Nodes are appended in execution order; backward() walks them in reverse.
/// Gradients accumulate additively across backward() calls until zero_grad(),
/// so two backward passes over the same graph double the stored gradients.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// A leaf holds an input or parameter value; nothing flows past it.
  Var leaf(Tensor value) { return record(std::move(value), {}, nullptr); }

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.grad = Tensor(value.shape());  // zero-initialized, same shape as value
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (Var v : inputs) {
      CRL_CHECK(v.id >= 0 && v.id < static_cast<int>(nodes_.size()),
                "Tape::record: input id " << v.id << " is not on this tape");
      n.inputs.push_back(v.id);
    }
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& value(Var v) const { return at(v.id).value; }
  const Tensor& grad(Var v) const { return at(v.id).grad; }

  int node_count() const { return static_cast<int>(nodes_.size()); }

  void zero_grad() {
    for (Node& n : nodes_) n.grad.fill(0.0);
  }

  /// Accumulates d(loss)/d(node) into every node's grad. Loss must be scalar.
  void backward(Var loss) {
    const Node& root = at(loss.id);
    CRL_CHECK(root.value.is_scalar(),
              "Tape::backward: loss must be scalar, got shape "
                  << shape_string(root.value.shape()));
    live_.assign(nodes_.size(), 0);
    adjoints_.assign(nodes_.size(), Tensor());

    // Reachability sweep so unrelated graph regions keep zero gradients.
    std::vector<int> stack{loss.id};
    live_[static_cast<std::size_t>(loss.id)] = 1;
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      for (int in : nodes_[static_cast<std::size_t>(id)].inputs) {
        if (!live_[static_cast<std::size_t>(in)]) {
          live_[static_cast<std::size_t>(in)] = 1;
          stack.push_back(in);
        }
      }
    }

    adjoint_acc(loss)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      std::size_t u = static_cast<std::size_t>(id);
      if (!live_[u] || adjoints_[u].empty()) continue;
      if (nodes_[u].backward) nodes_[u].backward(*this, Var{id});
    }

    for (std::size_t u = 0; u < nodes_.size(); ++u) {
      if (adjoints_[u].empty()) continue;
      Tensor& g = nodes_[u].grad;
      const Tensor& a = adjoints_[u];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += a[i];
    }
    adjoints_.clear();
    live_.clear();
  }

  // Backward-rule interface, valid only while backward() runs.

  /// Adjoint flowing into this node from its consumers.
  const Tensor& adjoint_of(Var v) const {
    at(v.id);  // bounds check
    const Tensor& a = adjoints_[static_cast<std::size_t>(v.id)];
    CRL_CHECK(!a.empty(), "Tape: adjoint read before any contribution");
    return a;
  }

  /// Adjoint accumulator for an input node; allocated as zeros on first use.
  Tensor& adjoint_acc(Var v) {
    const Node& n = at(v.id);
    Tensor& a = adjoints_[static_cast<std::size_t>(v.id)];
    if (a.empty()) a = Tensor(n.value.shape());
    return a;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  const Node& at(int id) const {
    CRL_CHECK(id >= 0 && id < static_cast<int>(nodes_.size()),
              "Tape: variable id " << id << " is not on this tape");
    return nodes_[static_cast<std::size_t>(id)];
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;  // scratch, only during backward()
  std::vector<char> live_;
};

}  // namespace crl
