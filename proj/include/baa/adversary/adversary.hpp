#pragma once

// Dual discriminators and the balanced adversarial objective.
//
//   V_Dts = mean[alpha log D_ts(F(I_s))] - mean[D_ts(F(I_t))]
//   V_Dst = mean[beta  log D_st(F(I_t))] - mean[D_st(F(I_s))]
//   GEN   = mean[alpha log D_ts(F(I_s)) + beta log D_st(F(I_t))
//              - D_ts(F(I_t)) - D_st(F(I_s))]
//   V_F   = GEN + lambda_ce * CE
//
// Discriminators maximise their values; F minimises V_F.

#include <cstdint>
#include <random>
#include <vector>

#include "baa/tensor/layers.hpp"

namespace baa::adversary {

using tensor::Parameter;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

struct BalanceWeights {
  double alpha = 0.02;
  double beta = 0.04;

  void validate() const;  // throws ConfigError unless both are positive
};

inline constexpr double kMinOutput = 1e-6;
inline constexpr double kMaxOutput = 1e6;

struct DiscriminatorConfig {
  std::size_t in_channels = 16;
  std::size_t grid = 8;  // input is grid x grid
  std::size_t width = 32;
};

// 5x5 stride-2 conv + leaky ReLU (no BatchNorm), then 5x5 conv + BatchNorm +
// leaky ReLU at 4x4, then a dense layer with softplus output clamped to
// [kMinOutput, kMaxOutput].
template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(std::string name, const DiscriminatorConfig& config, std::uint64_t seed);

  // embeddings[N * grid * grid, C] (EmbedNet output layout) -> [N, 1].
  Var<T> forward(Tape<T>& tape, Var<T> embeddings, bool training, bool frozen = false);

  std::vector<Parameter<T>*> parameters();
  std::vector<tensor::Buffer<T>> buffers();
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  tensor::Conv2d<T> conv1_, conv2_;
  tensor::BatchNorm<T> bn2_;
  tensor::Linear<T> dense_;
};

extern template class Discriminator<float>;
extern template class Discriminator<double>;

// Objective terms on discriminator outputs ([N, 1] each, strictly positive).
template <typename T>
Var<T> disc_ts_value(Var<T> d_ts_source, Var<T> d_ts_target, const BalanceWeights& w);
template <typename T>
Var<T> disc_st_value(Var<T> d_st_source, Var<T> d_st_target, const BalanceWeights& w);

enum class Direction { both, s2t, t2s };

// GEN with both discriminator pairs, or only the D_st (s2t) or D_ts (t2s)
// terms for the uni-directional ablations. Unused arguments may be invalid
// Vars for the uni-directional modes.
template <typename T>
Var<T> gen_value(Var<T> d_ts_source, Var<T> d_ts_target, Var<T> d_st_source, Var<T> d_st_target,
                 const BalanceWeights& w, Direction direction = Direction::both);

inline double total_mapper_loss(double gen, double ce, double lambda_ce) { return gen + lambda_ce * ce; }

// Two distributions over K symbols, the verification harness for the
// closed-form optimum.
struct DiscreteToyPair {
  std::vector<double> p_s, q_t;

  void validate() const;  // throws InvalidInput
  std::size_t size() const { return p_s.size(); }
};

struct AnalyticOptimum {
  std::vector<double> d1_star, d2_star;
  double value = 0;
};

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

// d1* = alpha p / q, d2* = beta q / p,
// value = alpha(log alpha - 1) + beta(log beta - 1) + alpha KL(p||q) + beta KL(q||p).
AnalyticOptimum analytic_optimum(const DiscreteToyPair& toy, const BalanceWeights& w);

// Objective value for arbitrary positive discriminator tables.
double toy_objective(const DiscreteToyPair& toy, const std::vector<double>& d1, const std::vector<double>& d2,
                     const BalanceWeights& w);

struct ToyTrainResult {
  std::vector<double> d1, d2;
  double value = 0;
  std::size_t steps = 0;
};

// Trains two discriminators (one-hot symbol features -> dense -> softplus)
// with Adam on the exact expectations until the objective stops moving.
ToyTrainResult train_toy_discriminators(const DiscreteToyPair& toy, const BalanceWeights& w, std::uint64_t seed,
                                        std::size_t max_steps = 200000, double lr = 1e-2);

}  // namespace baa::adversary
