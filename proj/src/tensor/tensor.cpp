#include "baa/tensor/tensor.hpp"

#include <cmath>
#include <sstream>

#include "baa/common/error.hpp"

namespace baa::tensor {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw InvalidInput(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != numel(shape_)) {
    throw InvalidInput("Tensor: " + std::to_string(data_.size()) + " values for shape " + to_string(shape_));
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw InvalidInput("Tensor::item on shape " + to_string(shape_));
  return data_[0];
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw InvalidInput("reshape: " + to_string(shape_) + " -> " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (auto v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace baa::tensor
