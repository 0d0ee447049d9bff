#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Var is a shared handle to a node holding a value matrix, optional spatial
// dimensions (when the matrix is a channel-major Grid) and, when gradients are
// required, the closure that pushes its gradient into its parents.

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "sara/tensor.hpp"

namespace sara::ad {

enum class ParamKind { weight, buffer };

/// A named learnable matrix plus its accumulated gradient. Buffers carry
/// persistent non-learned state (spectral-norm power-iteration vectors).
template <class S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  ParamKind kind = ParamKind::weight;
  bool frozen = false;

  bool trainable() const { return kind == ParamKind::weight && !frozen; }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Owns parameters in declaration order; addresses stay stable.
template <class S>
class ParamStore {
 public:
  Param<S>& add(std::string name, Mat<S> value, ParamKind kind = ParamKind::weight) {
    auto& p = params_.emplace_back();
    p.name = std::move(name);
    p.value = std::move(value);
    p.kind = kind;
    p.zero_grad();
    return p;
  }

  std::deque<Param<S>>& all() { return params_; }
  const std::deque<Param<S>>& all() const { return params_; }

  std::vector<Param<S>*> trainable() {
    std::vector<Param<S>*> out;
    for (auto& p : params_)
      if (p.kind == ParamKind::weight) out.push_back(&p);
    return out;
  }

  void set_frozen(bool frozen) {
    for (auto& p : params_) p.frozen = frozen;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  Eigen::Index weight_count() const {
    Eigen::Index n = 0;
    for (const auto& p : params_)
      if (p.kind == ParamKind::weight) n += p.value.size();
    return n;
  }

 private:
  std::deque<Param<S>> params_;
};

template <class S>
struct Node {
  Mat<S> value;
  Mat<S> grad;
  int height = 1;
  int width = 1;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  Param<S>* param = nullptr;

  void accumulate(const Mat<S>& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
  template <class Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

namespace detail {
inline std::uint64_t*& kink_slot() {
  thread_local std::uint64_t* slot = nullptr;
  return slot;
}
}  // namespace detail

/// While alive, piecewise-linear ops fold the side of every breakpoint each
/// element falls on into a signature. Two evaluations with equal signatures
/// lie on the same linear piece, which is what finite-difference checks need
/// to know.
class KinkTrace {
 public:
  KinkTrace() : previous_(detail::kink_slot()) { detail::kink_slot() = &hash_; }
  ~KinkTrace() { detail::kink_slot() = previous_; }
  KinkTrace(const KinkTrace&) = delete;
  KinkTrace& operator=(const KinkTrace&) = delete;

  std::uint64_t signature() const { return hash_; }

 private:
  std::uint64_t hash_ = 1469598103934665603ULL;
  std::uint64_t* previous_;
};

namespace detail {
/// Folds per-element piece indices into the active trace, if any.
template <class Expr>
void record_pieces(const Expr& piece) {
  std::uint64_t* h = kink_slot();
  if (!h) return;
  for (Eigen::Index j = 0; j < piece.cols(); ++j)
    for (Eigen::Index i = 0; i < piece.rows(); ++i) {
      *h ^= std::uint64_t(piece(i, j)) + 1;
      *h *= 1099511628211ULL;
    }
}
}  // namespace detail

/// Disables graph construction for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class S>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<S>> node) : node_(std::move(node)) {}

  const Mat<S>& value() const { return node_->value; }
  const Mat<S>& grad() const { return node_->grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  int height() const { return node_->height; }
  int width() const { return node_->width; }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return bool(node_); }
  S scalar() const { return node_->value(0, 0); }

  Grid<S> grid() const { return Grid<S>(node_->value, node_->height, node_->width); }

  const std::shared_ptr<Node<S>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<S>> node_;
};

/// Value that never receives gradient.
template <class S>
Var<S> constant(Mat<S> value, int height = -1, int width = -1) {
  auto n = std::make_shared<Node<S>>();
  n->height = height < 0 ? 1 : height;
  n->width = width < 0 ? int(value.cols()) : width;
  n->value = std::move(value);
  return Var<S>(std::move(n));
}

template <class S>
Var<S> constant(const Grid<S>& g) {
  return constant<S>(g.data, g.height, g.width);
}

/// Leaf that records its gradient (for input-gradient checks).
template <class S>
Var<S> watch(Mat<S> value, int height = -1, int width = -1) {
  auto v = constant<S>(std::move(value), height, width);
  v.node()->requires_grad = grad_enabled();
  return v;
}

template <class S>
Var<S> watch(const Grid<S>& g) {
  return watch<S>(g.data, g.height, g.width);
}

/// Leaf bound to a parameter: backward accumulates into `p.grad`.
template <class S>
Var<S> leaf(Param<S>& p) {
  auto n = std::make_shared<Node<S>>();
  n->value = p.value;
  n->height = 1;
  n->width = int(p.value.cols());
  n->requires_grad = grad_enabled() && p.trainable();
  n->param = &p;
  return Var<S>(std::move(n));
}

/// Builds an op result. The backward closure receives the result node and
/// must add into the gradients of those parents that require them.
template <class S, class Backward>
Var<S> make_op(Mat<S> value, int height, int width, std::vector<Var<S>> parents,
               Backward&& backward) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->height = height;
  n->width = width;
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::forward<Backward>(backward);
  }
  return Var<S>(std::move(n));
}

/// Propagates d(root)/d(.) through the graph. `root` must be 1x1 unless a
/// seed gradient of matching shape is supplied.
template <class S>
void backward(const Var<S>& root, const Mat<S>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  // iterative post-order DFS
  std::vector<std::pair<Node<S>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  if (seed)
    root.node()->grad = *seed;
  else
    root.node()->grad = Mat<S>::Ones(root.rows(), root.cols());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->grad.size() == 0) continue;
    if (n->backward) n->backward(*n);
    if (n->param) n->param->grad += n->grad;
  }
}

}  // namespace sara::ad
