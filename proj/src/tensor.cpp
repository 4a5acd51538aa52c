#include "luvit/tensor.hpp"

#include <sstream>

namespace luvit {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Buffer<Scalar> value, bool requires_grad) {
  if (luvit::numel(shape) != value.size()) {
    throw ShapeError("value length " + std::to_string(value.size()) + " does not match shape " + to_string(shape));
  }
  node_ = std::make_shared<Node<Scalar>>();
  node_->shape = std::move(shape);
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, Buffer<Scalar>::Zero(luvit::numel(shape)), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::filled(const Shape& shape, Scalar v, bool requires_grad) {
  return Tensor(shape, Buffer<Scalar>::Constant(luvit::numel(shape), v), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_vector(const Shape& shape, const std::vector<Scalar>& v, bool requires_grad) {
  Buffer<Scalar> b = Eigen::Map<const Buffer<Scalar>>(v.data(), static_cast<Index>(v.size()));
  return Tensor(shape, std::move(b), requires_grad);
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  const Index r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + to_string(shape()));
  return node_->shape[axis];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> Tensor<Scalar>::matrix() const {
  const Index cols = rank() == 0 ? 1 : node_->shape.back();
  return Eigen::Map<const RowMatrix<Scalar>>(node_->value.data(), numel() / cols, cols);
}

template <typename Scalar>
void Tensor<Scalar>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  if (!flag) node_->grad.resize(0);
}

template <typename Scalar>
const Buffer<Scalar>& Tensor<Scalar>::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename Scalar>
void backward(Tape<Scalar>& tape, const Tensor<Scalar>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;
  loss.node()->grad_slot().setOnes();
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const Node<Scalar>& node = **it;
    if (node.grad.size() != 0 && node.backward) node.backward(node);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(Tape<float>&, const Tensor<float>&);
template void backward<double>(Tape<double>&, const Tensor<double>&);

}  // namespace luvit
