#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared Node. Operations executed while a
// Tape is active (see TapeScope) record their result node on that tape when
// at least one input requires a gradient; otherwise they only compute values.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "luvit/errors.hpp"

namespace luvit {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Scalar>
using Buffer = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct Node {
  Shape shape;
  Buffer<Scalar> value;
  Buffer<Scalar> grad;  // empty when absent
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this node's grad into its inputs.
  std::function<void(const Node&)> backward;

  /// Returns the grad buffer, zero-initialising it on first use.
  Buffer<Scalar>& grad_slot() {
    if (grad.size() == 0) grad = Buffer<Scalar>::Zero(value.size());
    return grad;
  }
};

template <typename Scalar>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  Tensor(Shape shape, Buffer<Scalar> value, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor filled(const Shape& shape, Scalar v, bool requires_grad = false);
  static Tensor from_vector(const Shape& shape, const std::vector<Scalar>& v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const;
  Index numel() const { return node_->value.size(); }

  const Buffer<Scalar>& value() const { return node_->value; }
  /// Direct write access; only valid while the tensor is not recorded on a live tape.
  Buffer<Scalar>& mutable_value() { return node_->value; }
  Scalar item() const;
  Scalar operator[](Index i) const { return node_->value[i]; }

  /// Row-major 2D view: rows = numel / last extent, cols = last extent.
  Eigen::Map<const RowMatrix<Scalar>> matrix() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return node_->grad.size() != 0; }
  const Buffer<Scalar>& grad() const;
  void clear_grad() { node_->grad.resize(0); }

  /// Deep copy of the value, detached from any graph.
  Tensor clone() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Ordered record of the nodes produced during one forward pass.
template <typename Scalar>
class Tape {
 public:
  void record(const std::shared_ptr<Node<Scalar>>& node) { nodes_.push_back(node); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::shared_ptr<Node<Scalar>>>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::shared_ptr<Node<Scalar>>> nodes_;
};

template <typename Scalar>
Tape<Scalar>*& active_tape() {
  thread_local Tape<Scalar>* tape = nullptr;
  return tape;
}

/// Makes `tape` the recording target for the current thread for its lifetime.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : previous_(active_tape<Scalar>()) { active_tape<Scalar>() = &tape; }
  ~TapeScope() { active_tape<Scalar>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

/// Reverse sweep over `tape`, seeding d(loss)/d(loss) = 1.
/// Throws ContractError when `loss` is not a single element.
template <typename Scalar>
void backward(Tape<Scalar>& tape, const Tensor<Scalar>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void backward<float>(Tape<float>&, const Tensor<float>&);
extern template void backward<double>(Tape<double>&, const Tensor<double>&);

}  // namespace luvit
