#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hoiopt/tensor.hpp"

namespace hoiopt {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; values are read through it.
struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
  bool requires_grad() const;
};

/// Gradient accumulation buffers for one backward pass.
class GradBuf {
 public:
  explicit GradBuf(size_t n) : bufs_(n) {}

  /// Writable gradient buffer for a node, zero-initialized on first touch.
  std::vector<double>& at(int32_t id, int64_t numel) {
    auto& b = bufs_[static_cast<size_t>(id)];
    if (b.empty() && numel > 0) b.assign(static_cast<size_t>(numel), 0.0);
    return b;
  }

  void accum(int32_t id, const Tensor& g) {
    auto& b = at(id, g.numel());
    for (int64_t i = 0; i < g.numel(); ++i) b[static_cast<size_t>(i)] += g[i];
  }

  bool touched(int32_t id) const { return !bufs_[static_cast<size_t>(id)].empty(); }
  std::vector<double>& raw(int32_t id) { return bufs_[static_cast<size_t>(id)]; }

 private:
  std::vector<std::vector<double>> bufs_;
};

using BackFn = std::function<void(const Tensor& upstream, GradBuf& gb)>;

/// Gradients of a scalar root with respect to tape leaves. Leaves that did
/// not participate in the root's computation report zeros.
class GradMap {
 public:
  GradMap() = default;
  GradMap(std::unordered_map<int32_t, Tensor> grads) : grads_(std::move(grads)) {}

  Tensor get(const Var& leaf) const {
    auto it = grads_.find(leaf.id);
    if (it != grads_.end()) return it->second;
    return Tensor::zeros(leaf.val().shape());
  }

  bool has(const Var& leaf) const { return grads_.count(leaf.id) > 0; }

 private:
  std::unordered_map<int32_t, Tensor> grads_;
};

/// Reverse-mode autodiff tape. Records primitive ops in topological order
/// (creation order); backward() replays them once, newest to oldest.
///
/// A tape is single-owner and not shareable across threads. It is consumed
/// by backward(): running backward twice without re-recording is an error.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {
    nodes_.reserve(256);
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  size_t size() const { return nodes_.size(); }

  Var leaf(Tensor value, bool requires_grad = true) {
    bool rg = requires_grad && grad_enabled_;
    nodes_.push_back(Node{std::move(value), nullptr, rg});
    Var v{this, static_cast<int32_t>(nodes_.size() - 1)};
    if (rg) leaves_.push_back(v.id);
    return v;
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Record the result of a primitive. `back` receives the upstream gradient
  /// and accumulates into the parents' buffers; it is dropped when no parent
  /// requires a gradient.
  Var emit(Tensor value, std::initializer_list<Var> parents, BackFn back) {
    bool rg = false;
    if (grad_enabled_)
      for (const Var& p : parents) rg = rg || nodes_[static_cast<size_t>(p.id)].requires_grad;
    nodes_.push_back(Node{std::move(value), rg ? std::move(back) : nullptr, rg});
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
  }

  Var emit(Tensor value, const std::vector<Var>& parents, BackFn back) {
    bool rg = false;
    if (grad_enabled_)
      for (const Var& p : parents) rg = rg || nodes_[static_cast<size_t>(p.id)].requires_grad;
    nodes_.push_back(Node{std::move(value), rg ? std::move(back) : nullptr, rg});
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
  }

  const Tensor& value_of(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool node_requires_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  /// Backpropagate from a scalar root. Consumes the tape.
  GradMap backward(const Var& root) {
    if (root.tape != this) fail_logic("backward: root does not belong to this tape");
    if (consumed_)
      fail_logic("backward: tape already consumed; re-record the computation before "
                 "calling backward again");
    if (!grad_enabled_) fail_logic("backward: tape was created with gradients disabled");
    const Tensor& rv = value_of(root.id);
    if (!rv.is_scalar())
      fail_shape("backward: root must be scalar, got shape " + shape_str(rv.shape()));
    consumed_ = true;

    GradBuf gb(nodes_.size());
    gb.accum(root.id, Tensor::scalar(1.0));
    for (int32_t i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || !gb.touched(i)) continue;
      if (!n.back) continue;  // leaf
      Tensor up(n.value.shape(), std::move(gb.raw(i)));
      n.back(up, gb);
    }

    std::unordered_map<int32_t, Tensor> grads;
    for (int32_t id : leaves_) {
      if (gb.touched(id))
        grads.emplace(id, Tensor(value_of(id).shape(), std::move(gb.raw(id))));
    }
    return GradMap(std::move(grads));
  }

 private:
  struct Node {
    Tensor value;
    BackFn back;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
  std::vector<int32_t> leaves_;
  bool grad_enabled_;
  bool consumed_ = false;
};

inline const Tensor& Var::val() const { return tape->value_of(id); }
inline bool Var::requires_grad() const { return tape->node_requires_grad(id); }

}  // namespace hoiopt
