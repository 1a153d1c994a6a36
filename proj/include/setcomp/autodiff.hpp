#pragma once

// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape owns every intermediate value of one forward pass. Ops record a
// value plus a closure that pushes the node's gradient into its parents;
// Tape::backward replays the closures in reverse order. Nodes that cannot
// reach a parameter or tracked variable carry no closure, so evaluation-mode
// passes keep no backward state.

#include <Eigen/Core>

#include <cassert>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace setcomp::ad {

// Row-major so each row of a C x (B*H*W) feature map (one channel plane) is
// contiguous.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class Tape;

template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<Scalar>& tape() const { return *tape_; }
  int id() const { return id_; }
  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, nullptr, {}); }

  // Leaf whose gradient is read back with grad() after backward().
  Var<Scalar> variable(Mat value) { return push(std::move(value), true, nullptr, {}); }

  // Leaf whose gradient is added into *sink at the end of backward().
  Var<Scalar> parameter(Mat value, Mat* sink) { return push(std::move(value), true, sink, {}); }

  template <typename F>
  Var<Scalar> record(Mat value, bool requires_grad, F&& backward) {
    if (!requires_grad) return push(std::move(value), false, nullptr, {});
    return push(std::move(value), true, nullptr, BackwardFn(std::forward<F>(backward)));
  }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Gradient buffer of a node; zero-initialised on first access.
  Mat& grad(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  void accumulate(int id, Mat&& contribution) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = std::move(contribution);
    } else {
      n.grad += contribution;
    }
  }

  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() != 0; }

  template <typename Expr>
  void accumulate(int id, const Expr& contribution) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = contribution;
    } else {
      n.grad += contribution;
    }
  }

  // Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every leaf.
  void backward(const Var<Scalar>& root) {
    if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("backward: root must be a scalar");
    if (!root.requires_grad()) return;
    grad(root.id()).setOnes();
    for (int id = root.id(); id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, id);
      if (n.sink) *n.sink += n.grad;
      // Interior gradients are dead once propagated.
      if (n.backward) n.grad = Mat();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Mat* sink = nullptr;
    BackwardFn backward;
  };

  Var<Scalar> push(Mat value, bool requires_grad, Mat* sink, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, sink, std::move(fn)});
    return Var<Scalar>(this, static_cast<int>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
};

}  // namespace setcomp::ad
