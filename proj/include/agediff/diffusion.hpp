#pragma once

#include <cmath>
#include <functional>

#include "agediff/ops.hpp"
#include "agediff/rng.hpp"
#include "agediff/schedule.hpp"
#include "agediff/tensor.hpp"

namespace agediff {

// Predicts the noise component of a latent at a given timestep.
template <class S>
using DenoiseFn = std::function<TensorT<S>(const TensorT<S>&, int)>;

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
template <class S>
TensorT<S> forward_diffuse(const TensorT<S>& z0, int t, const DiffusionSchedule& sched,
                           const TensorT<S>& eps) {
  if (z0.shape() != eps.shape())
    throw ShapeError("forward_diffuse: z0 " + shape_str(z0.shape()) + " vs eps " +
                     shape_str(eps.shape()));
  const double abar = sched.alpha_bar_at(t);
  return add(scale(z0, std::sqrt(abar)), scale(eps, std::sqrt(1.0 - abar)));
}

// Mean squared noise-prediction error.
template <class S>
TensorT<S> diffusion_loss(const TensorT<S>& eps_hat, const TensorT<S>& eps) {
  if (eps_hat.shape() != eps.shape())
    throw ShapeError("diffusion_loss: " + shape_str(eps_hat.shape()) + " vs " +
                     shape_str(eps.shape()));
  return mean_all(square(sub(eps_hat, eps)));
}

// One ancestral reverse step. At t == 1 the noise term is dropped.
template <class S>
TensorT<S> ddpm_step(const TensorT<S>& z_t, const TensorT<S>& eps_hat, int t,
                     const DiffusionSchedule& sched, Rng& rng) {
  if (z_t.shape() != eps_hat.shape())
    throw ShapeError("ddpm_step: z " + shape_str(z_t.shape()) + " vs eps_hat " +
                     shape_str(eps_hat.shape()));
  const double beta = sched.beta_at(t);
  const double alpha = sched.alpha_at(t);
  const double abar = sched.alpha_bar_at(t);
  TensorT<S> mean = scale(sub(z_t, scale(eps_hat, beta / std::sqrt(1.0 - abar))),
                          1.0 / std::sqrt(alpha));
  if (t == 1) return mean;
  return add(mean, scale(TensorT<S>::randn(z_t.shape(), rng), std::sqrt(beta)));
}

// Deterministic sampler: walks a decimated timestep ladder, reprojecting the
// implied clean latent at each rung.
template <class S>
TensorT<S> ddim_sample(const TensorT<S>& z_T, const DenoiseFn<S>& model,
                       const DiffusionSchedule& sched, int steps) {
  if (steps < 1 || steps > sched.T)
    throw ValueError("ddim: steps " + std::to_string(steps) + " outside [1, " +
                     std::to_string(sched.T) + "]");
  std::vector<int> ts(static_cast<size_t>(steps) + 1);
  for (int i = 0; i < steps; ++i)
    ts[static_cast<size_t>(i)] =
        sched.T - static_cast<int>((static_cast<int64_t>(i) * sched.T) / steps);
  ts[static_cast<size_t>(steps)] = 0;

  TensorT<S> z = z_T;
  for (int i = 0; i < steps; ++i) {
    const int t = ts[static_cast<size_t>(i)];
    const int t_prev = ts[static_cast<size_t>(i) + 1];
    const double abar = sched.alpha_bar_at(t);
    const double abar_prev = sched.alpha_bar_at(t_prev);
    TensorT<S> eps_hat = model(z, t);
    if (eps_hat.shape() != z.shape())
      throw ShapeError("ddim: model output " + shape_str(eps_hat.shape()));
    TensorT<S> z0 = scale(sub(z, scale(eps_hat, std::sqrt(1.0 - abar))),
                          1.0 / std::sqrt(abar));
    z = add(scale(z0, std::sqrt(abar_prev)),
            scale(eps_hat, std::sqrt(1.0 - abar_prev)));
  }
  return z;
}

}  // namespace agediff
