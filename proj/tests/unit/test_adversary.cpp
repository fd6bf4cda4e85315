#include <cmath>
#include <random>

#include "baa/adversary/adversary.hpp"
#include "baa/common/error.hpp"
#include "doctest.h"
#include "../support/gradcheck.hpp"

using namespace baa;
using namespace baa::adversary;
using tensor::Tape;
using tensor::Tensor;

namespace {

Tensor<double> filled(std::size_t n, double v) { return Tensor<double>({n, 1}, std::vector<double>(n, v)); }

double value_of(tensor::Var<double> v) { return v.value().item(); }

const DiscreteToyPair kSkewed{{0.5, 0.5}, {0.25, 0.75}};

}  // namespace

TEST_CASE("objective at constant discriminator outputs") {
  Tape<double> tape(false);
  const BalanceWeights w;
  auto one = tape.constant(filled(8, 1.0));
  CHECK(value_of(disc_ts_value(one, one, w)) == doctest::Approx(-1.0));
  CHECK(value_of(disc_st_value(one, one, w)) == doctest::Approx(-1.0));
  CHECK(value_of(gen_value(one, one, one, one, w)) == doctest::Approx(-2.0));
  CHECK(value_of(gen_value(one, one, one, one, w, Direction::s2t)) == doctest::Approx(-1.0));

  // Matched domains with D_ts = alpha and D_st = beta.
  auto a = tape.constant(filled(8, w.alpha));
  auto b = tape.constant(filled(8, w.beta));
  CHECK(value_of(gen_value(a, a, b, b, w)) == doctest::Approx(-0.26700).epsilon(1e-4));

  CHECK(total_mapper_loss(-2.0, 0.0, 0.1) == doctest::Approx(-2.0));
  CHECK(total_mapper_loss(-2.0, std::log(4.0), 0.1) == doctest::Approx(-1.86137).epsilon(1e-5));
  CHECK(0.1 * std::log(4.0) == doctest::Approx(0.13863).epsilon(1e-4));
}

TEST_CASE("role swap exchanges the two discriminator values") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  std::vector<double> xs(6), ys(6);
  for (auto& v : xs) v = u(rng);
  for (auto& v : ys) v = u(rng);
  Tape<double> tape(false);
  auto x = tape.constant(Tensor<double>({6, 1}, xs));
  auto y = tape.constant(Tensor<double>({6, 1}, ys));
  const BalanceWeights w{0.02, 0.04}, swapped{0.04, 0.02};
  CHECK(value_of(disc_ts_value(x, y, w)) == doctest::Approx(value_of(disc_st_value(y, x, swapped))).epsilon(1e-12));
}

TEST_CASE("per-sample stationary point sits at alpha") {
  // d/dc [alpha log c - c] vanishes at c = alpha, so V_Dts is maximal there
  // when both domains coincide.
  const BalanceWeights w;
  auto at = [&](double c) {
    Tape<double> tape(false);
    auto d = tape.constant(filled(4, c));
    return value_of(disc_ts_value(d, d, w));
  };
  CHECK(at(w.alpha) > at(w.alpha * 1.05));
  CHECK(at(w.alpha) > at(w.alpha * 0.95));
}

TEST_CASE("balance weights validate") {
  CHECK_NOTHROW(BalanceWeights{}.validate());
  CHECK_THROWS_AS((BalanceWeights{0.0, 0.04}.validate()), ConfigError);
  CHECK_THROWS_AS((BalanceWeights{0.02, -1.0}.validate()), ConfigError);
}

TEST_CASE("closed-form optimum worked example") {
  const auto opt = analytic_optimum(kSkewed, BalanceWeights{});
  CHECK(opt.d1_star[0] == doctest::Approx(0.04));
  CHECK(opt.d1_star[1] == doctest::Approx(0.0133333).epsilon(1e-5));
  CHECK(opt.d2_star[0] == doctest::Approx(0.02));
  CHECK(opt.d2_star[1] == doctest::Approx(0.06));
  CHECK(kl_divergence(kSkewed.p_s, kSkewed.q_t) == doctest::Approx(0.14384).epsilon(1e-4));
  CHECK(kl_divergence(kSkewed.q_t, kSkewed.p_s) == doctest::Approx(0.13081).epsilon(1e-4));
  CHECK(opt.value == doctest::Approx(-0.25889).epsilon(1e-4));
  CHECK(toy_objective(kSkewed, opt.d1_star, opt.d2_star, BalanceWeights{}) == doctest::Approx(opt.value).epsilon(1e-12));

  const DiscreteToyPair same{{0.3, 0.7}, {0.3, 0.7}};
  CHECK(analytic_optimum(same, BalanceWeights{}).value == doctest::Approx(-0.26700).epsilon(1e-4));
}

TEST_CASE("closed form is the maximiser against a grid search") {
  const BalanceWeights w;
  const auto opt = analytic_optimum(kSkewed, w);
  // Each symbol separates, so a 1-D scan per table entry is exhaustive.
  for (std::size_t x = 0; x < 2; ++x) {
    for (int which = 0; which < 2; ++which) {
      double best_v = -1e300, best_d = 0;
      for (int i = 1; i <= 20000; ++i) {
        const double d = 1e-5 * i;
        auto d1 = opt.d1_star, d2 = opt.d2_star;
        (which == 0 ? d1 : d2)[x] = d;
        const double v = toy_objective(kSkewed, d1, d2, w);
        if (v > best_v) best_v = v, best_d = d;
      }
      const double expected = which == 0 ? opt.d1_star[x] : opt.d2_star[x];
      CHECK(best_d == doctest::Approx(expected).epsilon(1e-3));
      CHECK(best_v <= opt.value + 1e-12);
    }
  }
}

TEST_CASE("trained toy discriminators reach the closed form") {
  const BalanceWeights w;
  for (const auto& toy : {kSkewed, DiscreteToyPair{{0.2, 0.3, 0.5}, {0.4, 0.4, 0.2}}}) {
    const auto opt = analytic_optimum(toy, w);
    const auto trained = train_toy_discriminators(toy, w, 11);
    CHECK(std::abs(trained.value - opt.value) < 1e-2);
    for (std::size_t i = 0; i < toy.size(); ++i) {
      CHECK(trained.d1[i] == doctest::Approx(opt.d1_star[i]).epsilon(0.05));
      CHECK(trained.d2[i] == doctest::Approx(opt.d2_star[i]).epsilon(0.05));
    }
  }
}

TEST_CASE("toy pair validation") {
  CHECK_THROWS_AS((DiscreteToyPair{{0.5, 0.5}, {1.0, 0.0}}.validate()), InvalidInput);
  CHECK_THROWS_AS((DiscreteToyPair{{0.5, 0.6}, {0.5, 0.5}}.validate()), InvalidInput);
  CHECK_THROWS_AS((DiscreteToyPair{{1.0}, {0.5, 0.5}}.validate()), InvalidInput);
}

TEST_CASE("optimal value falls as the source moves toward the target") {
  const BalanceWeights w;
  double previous = analytic_optimum(kSkewed, w).value;
  for (int step = 1; step <= 10; ++step) {
    const double s = 0.1 * step;
    DiscreteToyPair moved{{0.5 + s * (0.25 - 0.5), 0.5 + s * (0.75 - 0.5)}, kSkewed.q_t};
    const double v = analytic_optimum(moved, w).value;
    CHECK(v < previous);
    previous = v;
  }
  CHECK(previous == doctest::Approx(w.alpha * (std::log(w.alpha) - 1) + w.beta * (std::log(w.beta) - 1)));
}

TEST_CASE("balance weights scale each divergence") {
  const double base = analytic_optimum(kSkewed, {0.02, 0.04}).value;
  const double more_alpha = analytic_optimum(kSkewed, {0.03, 0.04}).value;
  const double more_beta = analytic_optimum(kSkewed, {0.02, 0.05}).value;
  const double kl_pq = kl_divergence(kSkewed.p_s, kSkewed.q_t), kl_qp = kl_divergence(kSkewed.q_t, kSkewed.p_s);
  auto constant = [](double a) { return a * (std::log(a) - 1); };
  CHECK(more_alpha - base == doctest::Approx(constant(0.03) - constant(0.02) + 0.01 * kl_pq));
  CHECK(more_beta - base == doctest::Approx(constant(0.05) - constant(0.04) + 0.01 * kl_qp));
}

TEST_CASE("discriminator shapes and output range") {
  Discriminator<float> d("d", DiscriminatorConfig{}, 5);
  Tape<float> tape(false);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0, 1);
  Tensor<float> x({3 * 64, 16});
  for (auto& v : x.values()) v = n(rng);
  const auto out = d.forward(tape, tape.constant(x), true).value();
  REQUIRE(out.shape() == tensor::Shape{3, 1});
  for (float v : out.values()) {
    CHECK(v >= kMinOutput);
    CHECK(v <= kMaxOutput);
  }
  CHECK_THROWS_AS(d.forward(tape, tape.constant(Tensor<float>({65, 16})), true), InvalidInput);
  CHECK_THROWS_AS(d.forward(tape, tape.constant(Tensor<float>({64, 8})), true), InvalidInput);
}

TEST_CASE("discriminator and objective gradients match finite differences") {
  const DiscriminatorConfig cfg{4, 8, 4};
  Discriminator<double> dts("dts", cfg, 2), dst("dst", cfg, 3);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  Tensor<double> src({2 * 64, 4}), tgt({2 * 64, 4});
  for (auto& v : src.values()) v = n(rng);
  for (auto& v : tgt.values()) v = n(rng) + 0.5;
  auto params = dts.parameters();
  for (auto* p : dst.parameters()) params.push_back(p);
  const BalanceWeights w;
  auto loss = [&](Tape<double>& tape) {
    auto both = tape.constant(tensor::concat<double>({tape.constant(src), tape.constant(tgt)}).value());
    auto ots = dts.forward(tape, both, true), ost = dst.forward(tape, both, true);
    return gen_value(tensor::slice(ots, 0, 2), tensor::slice(ots, 2, 4), tensor::slice(ost, 0, 2),
                     tensor::slice(ost, 2, 4), w);
  };
  const auto res = testing::grad_check(params, loss, 1e-5, 64);
  CHECK(res.max_rel_error < 1e-5);
}

namespace {

// GEN for a 1-D toy where the source is N(mu, 1), the target N(0, 1), and both
// discriminators are frozen at their optimum for source mean mu0.
double gaussian_gen(double mu, double mu0, const std::vector<double>& eps_s, const std::vector<double>& eps_t,
                    const BalanceWeights& w) {
  auto ratio = [mu0](double x) { return std::exp(-0.5 * (x - mu0) * (x - mu0) + 0.5 * x * x); };  // p/q
  const std::size_t n = eps_s.size();
  Tensor<double> ts_s({n, 1}), ts_t({n, 1}), st_s({n, 1}), st_t({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const double xs = mu + eps_s[i], xt = eps_t[i];
    ts_s.values()[i] = w.alpha * ratio(xs);
    ts_t.values()[i] = w.alpha * ratio(xt);
    st_s.values()[i] = w.beta / ratio(xs);
    st_t.values()[i] = w.beta / ratio(xt);
  }
  Tape<double> tape(false);
  return value_of(gen_value(tape.constant(ts_s), tape.constant(ts_t), tape.constant(st_s), tape.constant(st_t), w));
}

}  // namespace

TEST_CASE("generator step against frozen optimal discriminators shrinks both divergences") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> eps_s(20000), eps_t(20000);
  for (auto& e : eps_s) e = n(rng);
  for (auto& e : eps_t) e = n(rng);
  const BalanceWeights w;
  for (double mu0 : {-1.5, 0.7, 2.0}) {
    CAPTURE(mu0);
    const double h = 1e-5;
    const double grad =
        (gaussian_gen(mu0 + h, mu0, eps_s, eps_t, w) - gaussian_gen(mu0 - h, mu0, eps_s, eps_t, w)) / (2 * h);
    const double mu1 = mu0 - 0.5 * grad;
    // For unit-variance Gaussians KL(p||q) = KL(q||p) = mu^2 / 2.
    CHECK(mu1 * mu1 / 2 < mu0 * mu0 / 2);
  }
}

TEST_CASE("raising beta strengthens the target-side pull") {
  const std::size_t n = 16;
  Tensor<double> d_src = filled(n, 0.03), d_tgt = filled(n, 0.05);
  double last = 0;
  for (double beta : {0.01, 0.02, 0.04, 0.08, 0.16}) {
    const BalanceWeights w{0.02, beta};
    // Derivative of GEN in each frozen discriminator input, by central differences
    // on the first sample: target-side log term against source-side log term.
    auto gen_at = [&](double dt, double ds) {
      Tensor<double> st_t = d_tgt, ts_s = d_src;
      st_t.values()[0] += dt;
      ts_s.values()[0] += ds;
      Tape<double> tape(false);
      return value_of(gen_value(tape.constant(ts_s), tape.constant(d_tgt), tape.constant(d_src), tape.constant(st_t), w));
    };
    const double h = 1e-7;
    const double target_side = std::abs(gen_at(h, 0) - gen_at(-h, 0)) / (2 * h);
    const double source_side = std::abs(gen_at(0, h) - gen_at(0, -h)) / (2 * h);
    const double rel = target_side / source_side;
    CAPTURE(beta);
    CHECK(rel > last);
    last = rel;
  }
}
