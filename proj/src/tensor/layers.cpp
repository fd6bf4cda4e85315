#include "baa/tensor/layers.hpp"

#include <cmath>

#include "baa/common/error.hpp"

namespace baa::tensor {

template <typename T>
Tensor<T> kaiming_normal(Shape shape, std::size_t fan_in, double gain, std::mt19937_64& rng) {
  Tensor<T> out(std::move(shape));
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  for (auto& v : out.storage()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
Conv2d<T>::Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, Conv2dSpec s,
                  bool with_bias, double gain, std::mt19937_64& rng)
    : weight(name + ".weight", kaiming_normal<T>({out, in, kernel, kernel}, in * kernel * kernel, gain, rng)),
      spec(s) {
  if (with_bias) bias = Parameter<T>(name + ".bias", Tensor<T>({out}));
}

template <typename T>
Var<T> Conv2d<T>::operator()(Tape<T>& tape, Var<T> x, bool frozen) {
  auto w = tape.parameter(weight, frozen);
  std::optional<Var<T>> b;
  if (!bias.value.empty()) b = tape.parameter(bias, frozen);
  return conv2d(x, w, b, spec);
}

template <typename T>
void Conv2d<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight);
  if (!bias.value.empty()) out.push_back(&bias);
}

template <typename T>
ConvTranspose2x2<T>::ConvTranspose2x2(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(name + ".weight", kaiming_normal<T>({in, out, 2, 2}, in, std::sqrt(2.0), rng)),
      bias(name + ".bias", Tensor<T>({out})) {}

template <typename T>
Var<T> ConvTranspose2x2<T>::operator()(Tape<T>& tape, Var<T> x, bool frozen) {
  return conv_transpose2x2(x, tape.parameter(weight, frozen), std::optional<Var<T>>(tape.parameter(bias, frozen)));
}

template <typename T>
void ConvTranspose2x2<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename T>
BatchNorm<T>::BatchNorm(std::string n, std::size_t channels)
    : gamma(n + ".gamma", Tensor<T>({channels}, T(1))),
      beta(n + ".beta", Tensor<T>({channels}, T(0))),
      running{Tensor<T>({channels}, T(0)), Tensor<T>({channels}, T(1))},
      name(std::move(n)) {}

template <typename T>
Var<T> BatchNorm<T>::operator()(Tape<T>& tape, Var<T> x, bool training, bool frozen) {
  BatchNormSpec spec;
  spec.training = training;
  return batch_norm(x, tape.parameter(gamma, frozen), tape.parameter(beta, frozen), running, spec);
}

template <typename T>
void BatchNorm<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

template <typename T>
void BatchNorm<T>::collect(std::vector<Buffer<T>>& out) {
  out.push_back({name + ".running_mean", &running.mean});
  out.push_back({name + ".running_var", &running.var});
}

template <typename T>
Linear<T>::Linear(std::string name, std::size_t in, std::size_t out, double gain, std::mt19937_64& rng)
    : weight(name + ".weight", kaiming_normal<T>({in, out}, in, gain, rng)),
      bias(name + ".bias", Tensor<T>({out})) {}

template <typename T>
Var<T> Linear<T>::operator()(Tape<T>& tape, Var<T> x, bool frozen) {
  return add_row_vector(matmul(x, tape.parameter(weight, frozen)), tape.parameter(bias, frozen));
}

template <typename T>
void Linear<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename To, typename From>
void copy_values(const std::vector<Parameter<From>*>& from, const std::vector<Parameter<To>*>& to) {
  if (from.size() != to.size()) throw InvalidInput("copy_values: parameter count mismatch");
  for (std::size_t i = 0; i < from.size(); ++i) {
    require_same_shape(from[i]->value.shape(), to[i]->value.shape(), "copy_values");
    to[i]->value = from[i]->value.template cast<To>();
    to[i]->zero_grad();
  }
}

template Tensor<float> kaiming_normal<float>(Shape, std::size_t, double, std::mt19937_64&);
template Tensor<double> kaiming_normal<double>(Shape, std::size_t, double, std::mt19937_64&);
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct ConvTranspose2x2<float>;
template struct ConvTranspose2x2<double>;
template struct BatchNorm<float>;
template struct BatchNorm<double>;
template struct Linear<float>;
template struct Linear<double>;
template void copy_values<double, float>(const std::vector<Parameter<float>*>&, const std::vector<Parameter<double>*>&);
template void copy_values<float, double>(const std::vector<Parameter<double>*>&, const std::vector<Parameter<float>*>&);
template void copy_values<float, float>(const std::vector<Parameter<float>*>&, const std::vector<Parameter<float>*>&);

}  // namespace baa::tensor
