#include "baa/tensor/tape.hpp"

#include "baa/common/error.hpp"

namespace baa::tensor {

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  Node node;
  node.value = p.value;
  node.requires_grad = grad_enabled_;
  node.param = &p;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<std::size_t>& inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  if (grad_enabled_) {
    for (auto id : inputs) {
      if (nodes_.at(id).requires_grad) {
        node.requires_grad = true;
        break;
      }
    }
  }
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  auto& node = nodes_.at(id);
  if (!node.grad_touched) {
    node.grad = Tensor<T>(node.value.shape());
    node.grad_touched = true;
  }
  return node.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw InvalidInput("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw InvalidInput("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  if (!requires_grad(loss.id())) throw InvalidInput("backward: loss is not connected to any parameter");
  grad(loss.id())[0] = T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.grad_touched) continue;
    if (node.backward) node.backward(*this, i);
    if (node.param != nullptr) {
      auto& pg = node.param->grad;
      if (pg.shape() != node.value.shape()) pg = Tensor<T>(node.value.shape());
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += node.grad[k];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace baa::tensor
