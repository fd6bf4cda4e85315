#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "baa/tensor/tape.hpp"

namespace baa::tensor {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

// Bias-corrected Adam update using each parameter's accumulated grad.
// Returns false, leaving parameters, moments and step untouched, if any
// gradient is non-finite.
template <typename T>
bool adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state);

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (auto* p : params) p->zero_grad();
}

extern template bool adam_step<float>(std::span<Parameter<float>* const>, AdamState<float>&);
extern template bool adam_step<double>(std::span<Parameter<double>* const>, AdamState<double>&);

}  // namespace baa::tensor
