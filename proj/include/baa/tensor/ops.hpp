#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "baa/tensor/tape.hpp"

// Differentiable primitives. Each op computes its forward value eagerly and
// registers the exact vector-Jacobian product on the input tape.
//
// Image-like activations use a channel-major batch layout [C, N, H, W]; a
// convolution is then one GEMM whose result is already in that layout, and
// per-channel reductions are contiguous rows.
namespace baa::tensor {

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, double s);
template <typename T> Var<T> add_scalar(Var<T> a, double s);
// X[M,N] + b[N] broadcast over rows.
template <typename T> Var<T> add_row_vector(Var<T> x, Var<T> b);

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// [A, B, ...] -> [B, A, ...]; a plain 2-D transpose when rank is 2.
template <typename T> Var<T> swap_leading(Var<T> x);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
// Sub-range [begin, end) along axis 0.
template <typename T> Var<T> slice(Var<T> x, std::size_t begin, std::size_t end);
// Concatenation along axis 0; trailing dims must agree.
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts);
// Same value, no gradient path.
template <typename T> Var<T> detach(Var<T> x);

template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> leaky_relu(Var<T> x, double slope = 0.2);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> softplus(Var<T> x);
template <typename T> Var<T> exp(Var<T> x);
// log(max(x, floor)); the gradient is zero where the floor is active.
template <typename T> Var<T> log(Var<T> x, double floor = 0.0);
// Identity inside [lo, hi], saturating outside.
template <typename T> Var<T> clamp(Var<T> x, double lo, double hi);

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);

template <typename T> Var<T> softmax_rows(Var<T> x);
template <typename T> Var<T> log_softmax_rows(Var<T> x);
// out[i][j] = ||a_i - b_j||^2 for A[M,C], B[N,C].
template <typename T> Var<T> pairwise_sq_dist(Var<T> a, Var<T> b);

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

// x[Ci,N,H,W] * w[Co,Ci,k,k] (+ b[Co]) -> [Co,N,Ho,Wo].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<Var<T>> b, Conv2dSpec spec);

// Kernel 2, stride 2 transposed convolution: x[Ci,N,H,W], w[Ci,Co,2,2] -> [Co,N,2H,2W].
template <typename T>
Var<T> conv_transpose2x2(Var<T> x, Var<T> w, std::optional<Var<T>> b);

template <typename T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;
};

struct BatchNormSpec {
  bool training = true;
  double momentum = 0.9;  // running <- momentum * running + (1 - momentum) * batch
  double eps = 1e-5;
};

// Per-channel normalisation over every axis but the first. In training mode
// batch statistics are used and `running` is updated; in eval mode the
// running statistics make it a fixed affine map.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& running,
                  BatchNormSpec spec);

}  // namespace baa::tensor
