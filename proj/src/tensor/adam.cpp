#include "baa/tensor/adam.hpp"

#include <cmath>

#include "baa/common/error.hpp"

namespace baa::tensor {

template <typename T>
bool adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  if (state.first_moment.empty()) {
    for (auto* p : params) {
      state.first_moment.emplace_back(p->value.shape());
      state.second_moment.emplace_back(p->value.shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw InvalidInput("adam_step: optimiser state tracks " + std::to_string(state.first_moment.size()) +
                       " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i]->value.shape(), state.first_moment[i].shape(), "adam_step");
    if (params[i]->grad.shape() != params[i]->value.shape()) params[i]->zero_grad();
    if (!params[i]->grad.all_finite()) return false;
  }

  const auto& c = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      const double mk = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      const double vk = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = c.lr * (mk / bc1) / (std::sqrt(vk / bc2) + c.eps);
      p.value[k] = static_cast<T>(p.value[k] - update);
    }
  }
  return true;
}

template bool adam_step<float>(std::span<Parameter<float>* const>, AdamState<float>&);
template bool adam_step<double>(std::span<Parameter<double>* const>, AdamState<double>&);

}  // namespace baa::tensor
