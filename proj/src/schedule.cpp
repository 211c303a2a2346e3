#include "agediff/schedule.hpp"

namespace agediff {

DiffusionSchedule make_schedule(int T, const std::string& kind, double beta_min,
                                double beta_max) {
  if (T < 1) throw ValueError("schedule: T must be at least 1");
  if (kind != "linear") throw ValueError("schedule: unknown kind '" + kind + "'");
  if (beta_min <= 0.0 || beta_max >= 1.0 || beta_min > beta_max)
    throw ValueError("schedule: need 0 < beta_min <= beta_max < 1");

  DiffusionSchedule s;
  s.T = T;
  s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
  s.alpha.assign(static_cast<size_t>(T) + 1, 0.0);
  s.alpha_bar.assign(static_cast<size_t>(T) + 1, 0.0);
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    s.beta[t] = beta_min + (beta_max - beta_min) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    prod *= s.alpha[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

}  // namespace agediff
