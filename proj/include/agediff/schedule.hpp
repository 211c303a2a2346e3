#pragma once

#include <string>
#include <vector>

#include "agediff/error.hpp"

namespace agediff {

// Noise schedule tables, indexed 1..T (index 0 is unused padding).
struct DiffusionSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double beta_at(int t) const { return at(beta, t); }
  double alpha_at(int t) const { return at(alpha, t); }
  // alpha_bar_at(0) == 1 by convention (the fully denoised endpoint).
  double alpha_bar_at(int t) const { return t == 0 ? 1.0 : at(alpha_bar, t); }

 private:
  double at(const std::vector<double>& v, int t) const {
    if (t < 1 || t > T) throw ValueError("schedule: timestep " + std::to_string(t) +
                                         " outside [1, " + std::to_string(T) + "]");
    return v[static_cast<size_t>(t)];
  }
};

DiffusionSchedule make_schedule(int T, const std::string& kind, double beta_min,
                                double beta_max);

}  // namespace agediff
