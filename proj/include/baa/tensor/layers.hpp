#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "baa/tensor/ops.hpp"

namespace baa::tensor {

// Kaiming-normal initialisation, std = gain / sqrt(fan_in).
template <typename T>
Tensor<T> kaiming_normal(Shape shape, std::size_t fan_in, double gain, std::mt19937_64& rng);

template <typename T>
struct Conv2d {
  Parameter<T> weight;
  Parameter<T> bias;  // empty when the layer has no bias
  Conv2dSpec spec;

  Conv2d() = default;
  Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, Conv2dSpec spec, bool with_bias,
         double gain, std::mt19937_64& rng);

  Var<T> operator()(Tape<T>& tape, Var<T> x, bool frozen = false);
  void collect(std::vector<Parameter<T>*>& out);
};

template <typename T>
struct ConvTranspose2x2 {
  Parameter<T> weight;
  Parameter<T> bias;

  ConvTranspose2x2() = default;
  ConvTranspose2x2(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng);

  Var<T> operator()(Tape<T>& tape, Var<T> x, bool frozen = false);
  void collect(std::vector<Parameter<T>*>& out);
};

template <typename T>
struct BatchNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  BatchNormStats<T> running;
  std::string name;

  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t channels);

  Var<T> operator()(Tape<T>& tape, Var<T> x, bool training, bool frozen = false);
  void collect(std::vector<Parameter<T>*>& out);
  void collect(std::vector<Buffer<T>>& out);
};

template <typename T>
struct Linear {
  Parameter<T> weight;  // [in, out]
  Parameter<T> bias;    // [out]

  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, double gain, std::mt19937_64& rng);

  // x[N, in] -> [N, out]
  Var<T> operator()(Tape<T>& tape, Var<T> x, bool frozen = false);
  void collect(std::vector<Parameter<T>*>& out);
};

// Converts parameter values between precisions (f32 training, f64 checks).
template <typename To, typename From>
void copy_values(const std::vector<Parameter<From>*>& from, const std::vector<Parameter<To>*>& to);

}  // namespace baa::tensor
