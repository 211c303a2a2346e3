#include <doctest.h>

#include <cmath>
#include <vector>

#include "agediff/diffusion.hpp"
#include "agediff/gradcheck.hpp"
#include "agediff/ops.hpp"
#include "agediff/schedule.hpp"

using namespace agediff;

namespace {
using DTensor = TensorT<double>;
}

TEST_CASE("linear schedule tables") {
  DiffusionSchedule s = make_schedule(4, "linear", 0.1, 0.4);
  CHECK(s.T == 4);
  CHECK(s.beta_at(1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(s.beta_at(2) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(s.beta_at(3) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(s.beta_at(4) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(s.alpha_at(2) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bar_at(2) == doctest::Approx(0.72).epsilon(1e-15));
  CHECK(s.alpha_bar_at(3) == doctest::Approx(0.504).epsilon(1e-15));
  CHECK(s.alpha_bar_at(4) == doctest::Approx(0.3024).epsilon(1e-15));
  CHECK(s.alpha_bar_at(0) == 1.0);

  DiffusionSchedule one = make_schedule(1, "linear", 0.02, 0.4);
  CHECK(one.beta_at(1) == doctest::Approx(0.02).epsilon(1e-15));

  CHECK_THROWS_AS(make_schedule(0, "linear", 0.1, 0.2), ValueError);
  CHECK_THROWS_AS(make_schedule(4, "cosine", 0.1, 0.2), ValueError);
  CHECK_THROWS_AS(make_schedule(4, "linear", 0.0, 0.2), ValueError);
  CHECK_THROWS_AS(make_schedule(4, "linear", 0.1, 1.0), ValueError);
  CHECK_THROWS_AS(make_schedule(4, "linear", 0.3, 0.2), ValueError);
  CHECK_THROWS_AS(s.beta_at(0), ValueError);
  CHECK_THROWS_AS(s.beta_at(5), ValueError);
}

TEST_CASE("forward diffusion closed form") {
  DiffusionSchedule s = make_schedule(4, "linear", 0.1, 0.4);
  DTensor z0 = DTensor::from_values({2}, {2.0, -1.0});
  DTensor eps = DTensor::from_values({2}, {-1.0, 0.5});
  DTensor z2 = forward_diffuse(z0, 2, s, eps);
  const double a = std::sqrt(0.72), b = std::sqrt(0.28);
  CHECK(z2.at(0) == doctest::Approx(2.0 * a - b).epsilon(1e-14));
  CHECK(z2.at(1) == doctest::Approx(-a + 0.5 * b).epsilon(1e-14));
  CHECK_THROWS_AS(forward_diffuse(z0, 9, s, eps), ValueError);
  CHECK_THROWS_AS(forward_diffuse(z0, 2, s, DTensor::zeros({3})), ShapeError);
}

TEST_CASE("forward diffusion marginal statistics") {
  DiffusionSchedule s = make_schedule(10, "linear", 0.02, 0.3);
  Rng rng(104);
  DTensor z0 = DTensor::zeros({4, 4});
  for (double& v : z0.mutable_values()) v = 2.0 * rng.uniform() - 1.0;

  const int t = 5;
  const double abar = s.alpha_bar_at(t);
  const int draws = 20000;
  const int n = 16;
  std::vector<double> mean(n, 0.0), m2(n, 0.0);
  for (int d = 0; d < draws; ++d) {
    DTensor eps = DTensor::randn({4, 4}, rng);
    DTensor zt = forward_diffuse(z0, t, s, eps);
    for (int i = 0; i < n; ++i) {
      const double x = zt.at(i);
      mean[i] += x;
      m2[i] += x * x;
    }
  }
  double mean_err = 0.0, var_err = 0.0;
  for (int i = 0; i < n; ++i) {
    mean[i] /= draws;
    const double var = m2[i] / draws - mean[i] * mean[i];
    mean_err += std::fabs(mean[i] - std::sqrt(abar) * z0.at(i));
    var_err += std::fabs(var - (1.0 - abar));
  }
  CHECK(mean_err / n < 0.01);
  CHECK(var_err / n < 0.02);
}

TEST_CASE("mean squared noise error") {
  Tensor a = Tensor::from_values({4}, {1, 0, 2, 3});
  Tensor b = Tensor::from_values({4}, {0, 1, 0, 3});
  CHECK(diffusion_loss(a, b).item() == doctest::Approx(1.5));
  CHECK_THROWS_AS(diffusion_loss(a, Tensor::zeros({2})), ShapeError);
}

TEST_CASE("ancestral step matches closed form") {
  DiffusionSchedule s = make_schedule(4, "linear", 0.1, 0.4);
  DTensor z = DTensor::from_values({2}, {1.0, -0.5});
  DTensor eh = DTensor::from_values({2}, {0.3, 0.2});
  Rng rng(7);

  DTensor out1 = ddpm_step(z, eh, 1, s, rng);
  const double c = 0.1 / std::sqrt(1.0 - 0.9);
  const double inv = 1.0 / std::sqrt(0.9);
  CHECK(out1.at(0) == doctest::Approx((1.0 - c * 0.3) * inv).epsilon(1e-14));
  CHECK(out1.at(1) == doctest::Approx((-0.5 - c * 0.2) * inv).epsilon(1e-14));

  // t > 1 adds sqrt(beta_t) noise from the given stream.
  Rng r1(42), r2(42);
  DTensor out3 = ddpm_step(z, eh, 3, s, r1);
  DTensor noise = DTensor::randn({2}, r2);
  const double c3 = 0.3 / std::sqrt(1.0 - 0.504);
  const double inv3 = 1.0 / std::sqrt(0.7);
  for (int i = 0; i < 2; ++i) {
    const double want = (z.at(i) - c3 * eh.at(i)) * inv3 + std::sqrt(0.3) * noise.at(i);
    CHECK(out3.at(i) == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("deterministic sampler recovers the clean latent from oracle noise") {
  DiffusionSchedule s = make_schedule(20, "linear", 0.01, 0.2);
  Rng rng(15);
  DTensor z0 = DTensor::randn({3, 3}, rng);
  DTensor eps = DTensor::randn({3, 3}, rng);
  DTensor zT = forward_diffuse(z0, s.T, s, eps);
  DenoiseFn<double> oracle = [&](const DTensor&, int) { return eps; };

  for (int steps : {1, 4, 7, 20}) {
    DTensor rec = ddim_sample(zT, oracle, s, steps);
    for (int i = 0; i < 9; ++i) CHECK(rec.at(i) == doctest::Approx(z0.at(i)).epsilon(1e-10));
  }
}

TEST_CASE("deterministic sampler with zero noise model scales the latent") {
  DiffusionSchedule s = make_schedule(12, "linear", 0.02, 0.1);
  DTensor zT = DTensor::from_values({2}, {0.8, -0.3});
  DenoiseFn<double> zero = [](const DTensor& z, int) { return DTensor::zeros(z.shape()); };
  DTensor out = ddim_sample(zT, zero, s, 5);
  const double gain = 1.0 / std::sqrt(s.alpha_bar_at(s.T));
  CHECK(out.at(0) == doctest::Approx(0.8 * gain).epsilon(1e-12));
  CHECK(out.at(1) == doctest::Approx(-0.3 * gain).epsilon(1e-12));
}

TEST_CASE("sampler step ladder covers T and rejects bad counts") {
  DiffusionSchedule s = make_schedule(10, "linear", 0.02, 0.1);
  DTensor zT = DTensor::zeros({1});
  std::vector<int> seen;
  DenoiseFn<double> spy = [&](const DTensor& z, int t) {
    seen.push_back(t);
    return DTensor::zeros(z.shape());
  };
  ddim_sample(zT, spy, s, 10);
  CHECK(seen.size() == 10);
  CHECK(seen.front() == 10);
  CHECK(seen.back() == 1);
  for (size_t i = 1; i < seen.size(); ++i) CHECK(seen[i] < seen[i - 1]);

  seen.clear();
  ddim_sample(zT, spy, s, 4);
  CHECK(seen == std::vector<int>{10, 8, 5, 3});

  CHECK_THROWS_AS(ddim_sample(zT, spy, s, 0), ValueError);
  CHECK_THROWS_AS(ddim_sample(zT, spy, s, 11), ValueError);
}

TEST_CASE("gradients flow through diffusion") {
  DiffusionSchedule s = make_schedule(6, "linear", 0.05, 0.3);
  Rng rng(33);
  DTensor z0 = DTensor::randn({2, 3}, rng);
  DTensor eps = DTensor::randn({2, 3}, rng);
  auto loss = [&]() { return diffusion_loss(silu(forward_diffuse(z0, 4, s, eps)), eps); };
  auto rep = grad_check<double>(loss, {z0}, 1e-5, 1e-4, 40, rng);
  INFO("max rel err ", rep.max_rel_err);
  CHECK(rep.pass);
}
