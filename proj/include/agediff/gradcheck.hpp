#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "agediff/ops.hpp"
#include "agediff/rng.hpp"
#include "agediff/tape.hpp"
#include "agediff/tensor.hpp"

namespace agediff {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int probes = 0;
  int failures = 0;
  bool pass = true;
  // Worst probe, for diagnostics.
  int worst_param = -1;
  int worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares analytic gradients of a scalar loss against central finite
// differences at randomly probed parameter coordinates. loss_fn must be a
// pure function of the given params (freeze any stochastic inputs outside).
template <class S>
GradCheckReport grad_check(const std::function<TensorT<S>()>& loss_fn,
                           std::vector<TensorT<S>> params, double step, double tol,
                           int probes, Rng& rng) {
  if (params.empty()) throw ValueError("grad_check: no params");
  if (probes < 1) throw ValueError("grad_check: probes must be positive");
  for (auto& p : params) p.set_requires_grad(true);

  std::vector<std::vector<S>> analytic(params.size());
  {
    TapeT<S> tape;
    typename TapeT<S>::Scope scope(tape);
    TensorT<S> loss = loss_fn();
    tape.backward(loss);
    for (size_t i = 0; i < params.size(); ++i) {
      if (!params[i].has_grad())
        throw ValueError("grad_check: param " + std::to_string(i) +
                         " received no gradient");
      analytic[i] = params[i].grad();
      params[i].clear_grad();
    }
    tape.reset();
  }

  GradCheckReport report;
  report.probes = probes;
  for (int probe = 0; probe < probes; ++probe) {
    const int pi = rng.uniform_int(0, static_cast<int>(params.size()) - 1);
    auto& vals = params[pi].mutable_values();
    const int ci = rng.uniform_int(0, static_cast<int>(vals.size()) - 1);
    const S saved = vals[ci];

    vals[ci] = saved + static_cast<S>(step);
    const double up = static_cast<double>(loss_fn().item());
    vals[ci] = saved - static_cast<S>(step);
    const double down = static_cast<double>(loss_fn().item());
    vals[ci] = saved;

    const double numeric = (up - down) / (2.0 * step);
    const double a = static_cast<double>(analytic[pi][ci]);
    const double denom = std::max({1e-3, std::fabs(a), std::fabs(numeric)});
    const double rel = std::fabs(a - numeric) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = pi;
      report.worst_coord = ci;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
    if (rel > tol) ++report.failures;
  }
  report.pass = report.failures == 0;
  return report;
}

}  // namespace agediff
