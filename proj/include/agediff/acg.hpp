#pragma once

#include <cmath>
#include <vector>

#include "agediff/ops.hpp"
#include "agediff/rng.hpp"
#include "agediff/synthface.hpp"
#include "agediff/tensor.hpp"

namespace agediff {

// Small head that predicts, in years, the age of the clean image implied by
// a noisy latent, its predicted noise, and the timestep. Inputs are pooled to
// keep the head well under 10k parameters.
template <class S>
struct ACGHeadT {
  TensorT<S> w1, b1;        // 48 -> 64
  TensorT<S> w2, b2;        // 64 -> 1
  TensorT<S> time_table;    // {T, 16} fixed sinusoidal rows, never trained
  int T = 0;

  static ACGHeadT init(int T, Rng& rng) {
    if (T < 1) throw ValueError("guidance head: T must be positive");
    ACGHeadT h;
    h.T = T;
    h.w1 = TensorT<S>::randn({48, 64}, rng, 1.0 / std::sqrt(48.0));
    h.b1 = TensorT<S>::zeros({1, 64});
    h.w2 = TensorT<S>::randn({64, 1}, rng, 1.0 / 8.0);
    h.b2 = TensorT<S>::full({1, 1}, S(43));
    h.time_table = TensorT<S>::zeros({T, 16});
    auto& tv = h.time_table.mutable_values();
    for (int t = 1; t <= T; ++t)
      for (int k = 0; k < 8; ++k) {
        const double w = std::pow(10000.0, -static_cast<double>(k) / 8.0);
        tv[static_cast<size_t>(t - 1) * 16 + 2 * k] = static_cast<S>(std::sin(t * w));
        tv[static_cast<size_t>(t - 1) * 16 + 2 * k + 1] = static_cast<S>(std::cos(t * w));
      }
    return h;
  }

  std::vector<TensorT<S>> params() const { return {w1, b1, w2, b2}; }

  int64_t learnable_count() const {
    int64_t n = 0;
    for (const auto& p : params()) n += p.numel();
    return n;
  }
};

using ACGHead = ACGHeadT<float>;

// Age prediction in years, shape {1, 1}. Differentiable in z_t and eps_hat.
template <class S>
TensorT<S> acg_forward(const ACGHeadT<S>& head, const TensorT<S>& z_t,
                       const TensorT<S>& eps_hat, int t) {
  if (t < 1 || t > head.T)
    throw ValueError("guidance head: timestep " + std::to_string(t) + " outside [1, " +
                     std::to_string(head.T) + "]");
  if (z_t.shape() != Shape{kImageSize, kImageSize} || eps_hat.shape() != z_t.shape())
    throw ShapeError("guidance head: latents must be " + std::to_string(kImageSize) + "x" +
                     std::to_string(kImageSize));
  TensorT<S> zp = reshape(avg_pool(z_t, 4), {1, 16});
  TensorT<S> ep = reshape(avg_pool(eps_hat, 4), {1, 16});
  TensorT<S> tp = lookup_rows(head.time_table, {t - 1});
  TensorT<S> x = concat_cols<S>({zp, ep, tp});
  TensorT<S> h = silu(add_rows(matmul(x, head.w1), head.b1));
  return add_rows(matmul(h, head.w2), head.b2);
}

// Squared error between the head's prediction and a target age, in years^2.
template <class S>
TensorT<S> age_guidance_loss(const TensorT<S>& pred, double target_age) {
  if (!pred.is_scalar()) throw ShapeError("guidance loss: prediction must be scalar");
  if (!std::isfinite(target_age)) throw ValueError("guidance loss: non-finite target");
  return mean_all(square(sub(pred, TensorT<S>::full(pred.shape(), static_cast<S>(target_age)))));
}

// l_diff + lambda * l_age
template <class S>
TensorT<S> total_loss(const TensorT<S>& l_diff, const TensorT<S>& l_age, double lambda) {
  if (lambda < 0.0 || !std::isfinite(lambda))
    throw ValueError("total loss: lambda must be finite and non-negative");
  return add(l_diff, scale(l_age, lambda));
}

// Frozen regressor mapping a clean image to age in years. Supplies the
// guidance targets; trained once, then never updated.
template <class S>
struct AgeProbeT {
  TensorT<S> w1, b1;  // 256 -> 32
  TensorT<S> w2, b2;  // 32 -> 1
  bool frozen = false;
  double val_mae = -1.0;

  static AgeProbeT init(Rng& rng) {
    AgeProbeT p;
    p.w1 = TensorT<S>::randn({kImageSize * kImageSize, 32}, rng, 1.0 / 16.0);
    p.b1 = TensorT<S>::zeros({1, 32});
    p.w2 = TensorT<S>::randn({32, 1}, rng, 1.0 / std::sqrt(32.0));
    p.b2 = TensorT<S>::full({1, 1}, S(43));
    return p;
  }

  std::vector<TensorT<S>> params() const { return {w1, b1, w2, b2}; }

  TensorT<S> forward(const TensorT<S>& image) const {
    if (image.numel() != kImageSize * kImageSize)
      throw ShapeError("age probe: image must have " +
                       std::to_string(kImageSize * kImageSize) + " values");
    TensorT<S> x = reshape(image, {1, kImageSize * kImageSize});
    TensorT<S> h = silu(add_rows(matmul(x, w1), b1));
    return add_rows(matmul(h, w2), b2);
  }

  double predict(const TensorT<S>& image) const {
    return static_cast<double>(forward(image).item());
  }
};

using AgeProbe = AgeProbeT<float>;

struct ProbeTrainConfig {
  int epochs = 6;
  double learning_rate = 2e-3;
  int batch_size = 32;
  double holdout_frac = 0.1;
  uint64_t seed = 1;
};

// Fits the probe on rendered faces, holding out a validation slice. Throws
// TrainError if the probe fails to beat the predict-the-mean baseline.
AgeProbe train_age_probe(const std::vector<DataRecord>& records,
                         const ProbeTrainConfig& cfg = ProbeTrainConfig{});

void save_age_probe(const std::string& path, const AgeProbe& probe);
AgeProbe load_age_probe(const std::string& path);

}  // namespace agediff
