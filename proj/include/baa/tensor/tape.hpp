#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "baa/tensor/tensor.hpp"

namespace baa::tensor {

// Trainable leaf that outlives any single tape.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

// Non-trainable persistent state (batch-norm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Wengert list. Nodes are appended in evaluation order, which is already a
// topological order, so backward is a single reverse sweep.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  // Gradients reaching this leaf are added into p.grad by backward().
  Var<T> parameter(Parameter<T>& p);
  // Frozen parameters take part in the forward pass as constants.
  Var<T> parameter(Parameter<T>& p, bool frozen) {
    return frozen ? constant(p.value) : parameter(p);
  }

  // Appends an op result. The closure is kept only if some input needs a
  // gradient and recording is enabled.
  Var<T> record(Tensor<T> value, const std::vector<std::size_t>& inputs, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  // Zero-initialised on first access.
  Tensor<T>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return nodes_.at(id).grad_touched; }

  // Seeds d(loss)/d(loss) = 1 and sweeps backwards. loss must be a scalar.
  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool grad_touched = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace baa::tensor
