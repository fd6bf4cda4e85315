#include "baa/adversary/adversary.hpp"

#include <cmath>

#include "baa/common/error.hpp"
#include "baa/tensor/adam.hpp"

namespace baa::adversary {

void BalanceWeights::validate() const {
  if (!(alpha > 0) || !(beta > 0) || !std::isfinite(alpha) || !std::isfinite(beta)) {
    throw ConfigError("balance weights alpha and beta must be positive and finite");
  }
}

namespace {
constexpr std::size_t kConv2Width = 2;  // conv2 channel multiplier over conv1
}

template <typename T>
Discriminator<T>::Discriminator(std::string name, const DiscriminatorConfig& c, std::uint64_t seed) : config_(c) {
  if (c.grid % 2 != 0) throw InvalidInput("Discriminator: grid must be even");
  std::mt19937_64 rng(seed);
  const double leaky_gain = std::sqrt(2.0 / (1 + 0.2 * 0.2));
  conv1_ = tensor::Conv2d<T>(name + ".conv1", c.in_channels, c.width, 5, {2, 2}, true, leaky_gain, rng);
  conv2_ = tensor::Conv2d<T>(name + ".conv2", c.width, kConv2Width * c.width, 5, {1, 2}, false, leaky_gain, rng);
  bn2_ = tensor::BatchNorm<T>(name + ".bn2", kConv2Width * c.width);
  const std::size_t reduced = c.grid / 2;
  dense_ = tensor::Linear<T>(name + ".dense", kConv2Width * c.width * reduced * reduced, 1, 1.0, rng);
}

template <typename T>
Var<T> Discriminator<T>::forward(Tape<T>& tape, Var<T> x, bool training, bool frozen) {
  const auto& s = x.shape();
  const std::size_t cells = config_.grid * config_.grid;
  if (s.size() != 2 || s[1] != config_.in_channels || s[0] % cells != 0) {
    throw InvalidInput("Discriminator: expected [N*" + std::to_string(cells) + ", " +
                       std::to_string(config_.in_channels) + "], got " + tensor::to_string(s));
  }
  const std::size_t n = s[0] / cells;
  x = tensor::reshape(tensor::swap_leading(x), {config_.in_channels, n, config_.grid, config_.grid});
  x = tensor::leaky_relu(conv1_(tape, x, frozen), 0.2);
  x = tensor::leaky_relu(bn2_(tape, conv2_(tape, x, frozen), training, frozen), 0.2);
  const auto& h = x.shape();
  x = tensor::reshape(tensor::swap_leading(x), {n, h[0] * h[2] * h[3]});
  return tensor::clamp(tensor::softplus(dense_(tape, x, frozen)), kMinOutput, kMaxOutput);
}

template <typename T>
std::vector<Parameter<T>*> Discriminator<T>::parameters() {
  std::vector<Parameter<T>*> out;
  conv1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  dense_.collect(out);
  return out;
}

template <typename T>
std::vector<tensor::Buffer<T>> Discriminator<T>::buffers() {
  std::vector<tensor::Buffer<T>> out;
  bn2_.collect(out);
  return out;
}

template class Discriminator<float>;
template class Discriminator<double>;

template <typename T>
Var<T> disc_ts_value(Var<T> d_ts_source, Var<T> d_ts_target, const BalanceWeights& w) {
  return tensor::sub(tensor::scale(tensor::mean(tensor::log(d_ts_source)), w.alpha), tensor::mean(d_ts_target));
}

template <typename T>
Var<T> disc_st_value(Var<T> d_st_source, Var<T> d_st_target, const BalanceWeights& w) {
  return tensor::sub(tensor::scale(tensor::mean(tensor::log(d_st_target)), w.beta), tensor::mean(d_st_source));
}

template <typename T>
Var<T> gen_value(Var<T> d_ts_source, Var<T> d_ts_target, Var<T> d_st_source, Var<T> d_st_target,
                 const BalanceWeights& w, Direction direction) {
  switch (direction) {
    case Direction::s2t: return disc_st_value(d_st_source, d_st_target, w);
    case Direction::t2s: return disc_ts_value(d_ts_source, d_ts_target, w);
    default: return tensor::add(disc_ts_value(d_ts_source, d_ts_target, w), disc_st_value(d_st_source, d_st_target, w));
  }
}

template Var<float> disc_ts_value<float>(Var<float>, Var<float>, const BalanceWeights&);
template Var<double> disc_ts_value<double>(Var<double>, Var<double>, const BalanceWeights&);
template Var<float> disc_st_value<float>(Var<float>, Var<float>, const BalanceWeights&);
template Var<double> disc_st_value<double>(Var<double>, Var<double>, const BalanceWeights&);
template Var<float> gen_value<float>(Var<float>, Var<float>, Var<float>, Var<float>, const BalanceWeights&, Direction);
template Var<double> gen_value<double>(Var<double>, Var<double>, Var<double>, Var<double>, const BalanceWeights&,
                                       Direction);

void DiscreteToyPair::validate() const {
  if (p_s.empty() || p_s.size() != q_t.size()) throw InvalidInput("toy pair: supports must be non-empty and equal");
  double sp = 0, sq = 0;
  for (std::size_t i = 0; i < p_s.size(); ++i) {
    if (!(p_s[i] >= 0) || !(q_t[i] >= 0)) throw InvalidInput("toy pair: negative probability");
    if ((p_s[i] > 0) != (q_t[i] > 0)) throw InvalidInput("toy pair: support mismatch at symbol " + std::to_string(i));
    sp += p_s[i];
    sq += q_t[i];
  }
  if (std::abs(sp - 1) > 1e-9 || std::abs(sq - 1) > 1e-9) throw InvalidInput("toy pair: probabilities must sum to 1");
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

AnalyticOptimum analytic_optimum(const DiscreteToyPair& toy, const BalanceWeights& w) {
  toy.validate();
  AnalyticOptimum out;
  for (std::size_t i = 0; i < toy.size(); ++i) {
    const bool on = toy.p_s[i] > 0;
    out.d1_star.push_back(on ? w.alpha * toy.p_s[i] / toy.q_t[i] : 0.0);
    out.d2_star.push_back(on ? w.beta * toy.q_t[i] / toy.p_s[i] : 0.0);
  }
  out.value = w.alpha * (std::log(w.alpha) - 1) + w.beta * (std::log(w.beta) - 1) +
              w.alpha * kl_divergence(toy.p_s, toy.q_t) + w.beta * kl_divergence(toy.q_t, toy.p_s);
  return out;
}

double toy_objective(const DiscreteToyPair& toy, const std::vector<double>& d1, const std::vector<double>& d2,
                     const BalanceWeights& w) {
  double v = 0;
  for (std::size_t i = 0; i < toy.size(); ++i) {
    if (toy.p_s[i] > 0) v += w.alpha * toy.p_s[i] * std::log(d1[i]) - toy.p_s[i] * d2[i];
    if (toy.q_t[i] > 0) v += w.beta * toy.q_t[i] * std::log(d2[i]) - toy.q_t[i] * d1[i];
  }
  return v;
}

ToyTrainResult train_toy_discriminators(const DiscreteToyPair& toy, const BalanceWeights& w, std::uint64_t seed,
                                        std::size_t max_steps, double lr) {
  toy.validate();
  const std::size_t k = toy.size();
  std::mt19937_64 rng(seed);
  tensor::Linear<double> d1("toy.d1", k, 1, 1.0, rng), d2("toy.d2", k, 1, 1.0, rng);
  std::vector<Parameter<double>*> params;
  d1.collect(params);
  d2.collect(params);
  tensor::AdamState<double> adam;
  adam.config.lr = lr;

  Tensor<double> onehot({k, k});
  for (std::size_t i = 0; i < k; ++i) onehot[i * k + i] = 1;
  const Tensor<double> p({k, 1}, toy.p_s), q({k, 1}, toy.q_t);

  ToyTrainResult out;
  double previous = -1e300;
  for (out.steps = 1; out.steps <= max_steps; ++out.steps) {
    tensor::zero_grads<double>(params);
    Tape<double> tape;
    auto x = tape.constant(onehot);
    auto o1 = tensor::clamp(tensor::softplus(d1(tape, x)), kMinOutput, kMaxOutput);
    auto o2 = tensor::clamp(tensor::softplus(d2(tape, x)), kMinOutput, kMaxOutput);
    auto pv = tape.constant(p), qv = tape.constant(q);
    // Exact expectations: sum_x p(x)[alpha log D1 - D2] + q(x)[beta log D2 - D1].
    auto value = tensor::sum(tensor::add(
        tensor::mul(pv, tensor::sub(tensor::scale(tensor::log(o1, 1e-300), w.alpha), o2)),
        tensor::mul(qv, tensor::sub(tensor::scale(tensor::log(o2, 1e-300), w.beta), o1))));
    out.value = value.value().item();
    tape.backward(tensor::scale(value, -1.0));
    tensor::adam_step<double>(params, adam);
    if (out.steps % 1000 == 0) {
      if (std::abs(out.value - previous) < 1e-12) break;
      previous = out.value;
    }
  }
  Tape<double> tape(false);
  auto x = tape.constant(onehot);
  const auto o1 = tensor::softplus(d1(tape, x)).value(), o2 = tensor::softplus(d2(tape, x)).value();
  out.d1.assign(o1.values().begin(), o1.values().end());
  out.d2.assign(o2.values().begin(), o2.values().end());
  out.value = toy_objective(toy, out.d1, out.d2, w);
  return out;
}

}  // namespace baa::adversary
