#include <doctest.h>

#include <cmath>

#include "agediff/acg.hpp"
#include "agediff/gradcheck.hpp"
#include "agediff/synthface.hpp"

using namespace agediff;

namespace {
using DTensor = TensorT<double>;

DTensor rand_latent(Rng& rng) { return DTensor::randn({kImageSize, kImageSize}, rng, 0.5); }
}  // namespace

TEST_CASE("guidance head stays small and deterministic") {
  Rng r1(401), r2(401);
  auto a = ACGHeadT<float>::init(200, r1);
  auto b = ACGHeadT<float>::init(200, r2);
  CHECK(a.learnable_count() == 3201);
  CHECK(a.learnable_count() <= 10000);
  for (int i = 0; i < a.w1.numel(); ++i) CHECK(a.w1.at(i) == b.w1.at(i));
  CHECK(a.time_table.shape() == Shape{200, 16});
  CHECK_THROWS_AS(ACGHeadT<float>::init(0, r1), ValueError);
}

TEST_CASE("guidance head forward") {
  Rng rng(402);
  auto head = ACGHeadT<double>::init(50, rng);
  DTensor z = rand_latent(rng);
  DTensor e = rand_latent(rng);
  DTensor y = acg_forward(head, z, e, 10);
  CHECK(y.shape() == Shape{1, 1});
  // Near init the head answers close to its bias, mid-range in years.
  CHECK(y.item() > 0.0);
  CHECK(y.item() < 90.0);

  // Timestep changes the fixed encoding row, so the output moves.
  DTensor y2 = acg_forward(head, z, e, 40);
  CHECK(y.item() != y2.item());

  CHECK_THROWS_AS(acg_forward(head, z, e, 0), ValueError);
  CHECK_THROWS_AS(acg_forward(head, z, e, 51), ValueError);
  CHECK_THROWS_AS(acg_forward(head, DTensor::zeros({4, 4}), e, 10), ShapeError);
}

TEST_CASE("time table is excluded from learnables") {
  Rng rng(403);
  auto head = ACGHeadT<double>::init(30, rng);
  for (const auto& p : head.params()) CHECK_FALSE(p.same_storage(head.time_table));
  CHECK(head.params().size() == 4);
}

TEST_CASE("guidance loss values") {
  DTensor pred = DTensor::full({1, 1}, 30.0);
  CHECK(age_guidance_loss(pred, 25.0).item() == doctest::Approx(25.0));
  CHECK(age_guidance_loss(pred, 30.0).item() == doctest::Approx(0.0));
  CHECK_THROWS_AS(age_guidance_loss(DTensor::zeros({2, 1}), 25.0), ShapeError);
  CHECK_THROWS_AS(age_guidance_loss(pred, std::nan("")), ValueError);

  DTensor ld = DTensor::scalar(2.0);
  DTensor la = DTensor::scalar(25.0);
  CHECK(total_loss(ld, la, 0.1).item() == doctest::Approx(4.5));
  CHECK(total_loss(ld, la, 0.0).item() == doctest::Approx(2.0));
  CHECK_THROWS_AS(total_loss(ld, la, -0.1), ValueError);
}

TEST_CASE("gradients reach the noise prediction through the head") {
  Rng rng(404);
  auto head = ACGHeadT<double>::init(40, rng);
  DTensor z = rand_latent(rng);
  DTensor eps_hat = rand_latent(rng);
  DTensor l_diff = DTensor::scalar(1.5);

  auto loss = [&]() {
    DTensor pred = acg_forward(head, z, eps_hat, 17);
    return total_loss(detach(l_diff), age_guidance_loss(pred, 60.0), 0.05);
  };
  std::vector<DTensor> params = head.params();
  params.push_back(eps_hat);
  params.push_back(z);
  auto rep = grad_check<double>(loss, params, 1e-5, 1e-4, 100, rng);
  INFO("max rel err ", rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("age probe learns the render law") {
  auto records = generate_dataset(1500, 424242, "balanced");
  ProbeTrainConfig cfg;
  cfg.seed = 5;
  AgeProbe probe = train_age_probe(records, cfg);
  CHECK(probe.frozen);
  CHECK(probe.val_mae >= 0.0);
  CHECK(probe.val_mae < 6.0);
  for (const auto& p : probe.params()) CHECK_FALSE(p.requires_grad());

  // Spot predictions on fresh renders.
  Rng rng(405);
  double err = 0.0;
  int n = 0;
  for (int age : {5, 25, 45, 65, 85}) {
    FaceSpec s;
    for (double& x : s.u) x = 1.6 * rng.uniform() - 0.8;
    s.age = age;
    s.noise_key = rng.next_u64();
    err += std::fabs(probe.predict(render_face(s)) - age);
    ++n;
  }
  CHECK(err / n < 8.0);
}

TEST_CASE("age probe training is reproducible") {
  auto records = generate_dataset(400, 77, "balanced");
  ProbeTrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 9;
  AgeProbe a = train_age_probe(records, cfg);
  AgeProbe b = train_age_probe(records, cfg);
  CHECK(a.val_mae == b.val_mae);
  for (int i = 0; i < a.w2.numel(); ++i) CHECK(a.w2.at(i) == b.w2.at(i));
}

TEST_CASE("age probe must beat the mean baseline") {
  // Constant-age data gives the baseline zero error; the probe cannot win.
  Rng rng(406);
  std::vector<DataRecord> records;
  for (int i = 0; i < 100; ++i) {
    FaceSpec s;
    for (double& x : s.u) x = 1.6 * rng.uniform() - 0.8;
    s.age = 40;
    s.noise_key = rng.next_u64();
    DataRecord rec;
    rec.spec = s;
    rec.image = render_face(s);
    rec.age = s.age;
    records.push_back(std::move(rec));
  }
  ProbeTrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_age_probe(records, cfg), TrainError);

  CHECK_THROWS_AS(train_age_probe({}, ProbeTrainConfig{}), ValueError);
}
