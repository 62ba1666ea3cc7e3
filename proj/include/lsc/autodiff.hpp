#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "lsc/tensor.hpp"

// Reverse-mode autodiff on an append-only tape. Nodes are created in forward
// order, so creation order is already a topological order and backward() is a
// single reverse sweep. Node gradients are scratch that is reset on every
// backward call; parameter gradients accumulate across calls until zero_grad.
namespace lsc::ad {

template <typename T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  bool trainable = true;

  ParamT() = default;
  ParamT(std::string n, TensorT<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = TensorT<T>(value.shape);
  }
  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class TapeT;

template <typename T>
struct NodeT {
  TensorT<T> value;
  TensorT<T> grad;                    // lazily allocated during backward
  std::vector<NodeT<T>*> parents;
  std::function<void(TapeT<T>&)> backward_fn;
  ParamT<T>* param = nullptr;         // set for parameter leaves; value lives in the param

  const TensorT<T>& val() const { return param ? param->value : value; }

  // Adds g into this node's gradient, allocating zeros on first touch.
  void add_grad_at(int64_t i, T g) {
    if (grad.empty()) grad = TensorT<T>(val().shape);
    grad.data[size_t(i)] += g;
  }
  TensorT<T>& grad_buffer() {
    if (grad.empty()) grad = TensorT<T>(val().shape);
    return grad;
  }
};

template <typename T>
class TapeT {
 public:
  // When off, make() records neither parents nor closures (inference mode).
  bool grad_enabled = true;
  // When on, backward() frees node values and closures as soon as they are no
  // longer needed, making the graph single-use but roughly halving peak memory.
  bool release_buffers = false;

  NodeT<T>* make(TensorT<T> value, std::vector<NodeT<T>*> parents,
                 std::function<void(TapeT<T>&)> backward_fn) {
    nodes_.emplace_back();
    NodeT<T>* n = &nodes_.back();
    n->value = std::move(value);
    if (grad_enabled) {
      n->parents = std::move(parents);
      n->backward_fn = std::move(backward_fn);
    }
    return n;
  }

  NodeT<T>* leaf(TensorT<T> value) { return make(std::move(value), {}, nullptr); }

  NodeT<T>* leaf_param(ParamT<T>& p) {
    nodes_.emplace_back();
    NodeT<T>* n = &nodes_.back();
    n->param = &p;  // value reads go through the param, no copy
    if (grad_enabled && p.trainable)
      n->backward_fn = [n](TapeT<T>&) {
        if (n->grad.empty()) return;
        TensorT<T>& g = n->param->grad;
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n->grad.data[i];
      };
    return n;
  }

  // Reverse sweep from a scalar root. Parameter grads accumulate; calling this
  // twice on the same graph doubles them exactly.
  void backward(NodeT<T>* root) {
    if (root->val().numel() != 1)
      throw ShapeError("backward root must be scalar, got " + root->val().shape_str());
    root->grad_buffer().data[0] = T(1);
    size_t root_idx = nodes_.size();
    for (size_t i = nodes_.size(); i-- > 0;)
      if (&nodes_[i] == root) {
        root_idx = i;
        break;
      }
    if (root_idx == nodes_.size()) throw Error("backward root is not on this tape");
    for (size_t i = root_idx + 1; i-- > 0;) {
      NodeT<T>& n = nodes_[i];
      if (!n.grad.empty() && n.backward_fn) n.backward_fn(*this);
      if (release_buffers) {
        n.backward_fn = nullptr;
        n.grad = TensorT<T>();
        if (!n.param && &n != root) n.value = TensorT<T>();
      } else {
        n.grad = TensorT<T>();
      }
    }
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  std::deque<NodeT<T>> nodes_;
};

using Param = ParamT<float>;
using Node = NodeT<float>;
using Tape = TapeT<float>;

}  // namespace lsc::ad
