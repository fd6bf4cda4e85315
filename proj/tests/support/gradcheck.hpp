#pragma once

// Central finite-difference oracle for the tape. Test-only: it evaluates the
// loss as a black box and never looks at recorded closures.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "baa/tensor/tape.hpp"

namespace baa::testing {

using LossFn = std::function<tensor::Var<double>(tensor::Tape<double>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;  // worst parameter, ||analytic - numeric|| / max(||analytic||, ||numeric||)
  std::size_t worst_param = 0;
};

inline double evaluate(const LossFn& f) {
  tensor::Tape<double> tape(false);
  return f(tape).value().item();
}

// Checks d loss / d p for every parameter. Elements are probed in full unless
// max_probes limits them (strided subset) for larger networks. The relative
// error of a parameter whose true gradient vanishes (a bias that every
// pairwise distance cancels) is taken against 1e-6 of the overall gradient
// norm rather than against its own rounding noise.
inline GradCheckResult grad_check(const std::vector<tensor::Parameter<double>*>& params, const LossFn& f,
                                  double h = 1e-4, std::size_t max_probes = 0) {
  for (auto* p : params) p->zero_grad();
  {
    tensor::Tape<double> tape;
    auto loss = f(tape);
    tape.backward(loss);
  }
  double total2 = 0.0;
  for (auto* p : params)
    for (std::size_t k = 0; k < p->grad.size(); ++k) total2 += p->grad[k] * p->grad[k];
  const double floor = std::max(1e-6 * std::sqrt(total2), 1e-12);
  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    const std::size_t n = p.value.size();
    const std::size_t step = (max_probes == 0 || n <= max_probes) ? 1 : (n + max_probes - 1) / max_probes;
    double diff2 = 0.0, an2 = 0.0, nu2 = 0.0;
    for (std::size_t k = 0; k < n; k += step) {
      const double orig = p.value[k];
      p.value[k] = orig + h;
      const double up = evaluate(f);
      p.value[k] = orig - h;
      const double down = evaluate(f);
      p.value[k] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad[k];
      diff2 += (analytic - numeric) * (analytic - numeric);
      an2 += analytic * analytic;
      nu2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(an2), std::sqrt(nu2), floor});
    const double rel = std::sqrt(diff2) / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_param = pi;
    }
  }
  return res;
}

}  // namespace baa::testing
