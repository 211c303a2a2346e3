#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "agediff/rng.hpp"
#include "agediff/synthface.hpp"
#include "agediff/vocab.hpp"

using namespace agediff;

namespace {

FaceSpec make_spec(Rng& rng, int age) {
  FaceSpec s;
  for (double& x : s.u) x = 1.8 * rng.uniform() - 0.9;
  s.age = age;
  s.noise_key = rng.next_u64();
  return s;
}

double l2(const std::vector<float>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("render is deterministic and bounded") {
  Rng rng(301);
  FaceSpec spec = make_spec(rng, 40);
  Tensor a = render_face(spec);
  Tensor b = render_face(spec);
  for (int i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
  for (int i = 0; i < a.numel(); ++i) {
    CHECK(a.at(i) >= -1.0f);
    CHECK(a.at(i) <= 1.0f);
  }

  FaceSpec other = spec;
  other.noise_key ^= 0x1;
  Tensor c = render_face(other);
  // Hair and forehead bands ignore the noise stream.
  for (int i = 0; i < 7 * kImageSize; ++i) CHECK(a.at(i) == c.at(i));
  bool bg_differs = false;
  for (int i = 7 * kImageSize; i < a.numel(); ++i) bg_differs |= a.at(i) != c.at(i);
  CHECK(bg_differs);
}

TEST_CASE("render band values follow the pinned laws") {
  Rng rng(302);
  FaceSpec spec = make_spec(rng, 85);
  spec.u[4] = 0.5;  // tone 0.375
  Tensor img = render_face(spec);
  CHECK(img.at(0) == doctest::Approx(0.6).epsilon(1e-6));
  // Forehead at max age alternates tone +- 0.5.
  CHECK(img.at(3 * kImageSize + 0) == doctest::Approx(0.875).epsilon(1e-6));
  CHECK(img.at(3 * kImageSize + 1) == doctest::Approx(-0.125).epsilon(1e-6));

  spec.age = 1;
  Tensor young = render_face(spec);
  CHECK(young.at(5) == doctest::Approx(-0.2 + 0.8 / 85.0).epsilon(1e-6));

  FaceSpec bad = spec;
  bad.age = 0;
  CHECK_THROWS_AS(render_face(bad), ValueError);
  bad = spec;
  bad.u[3] = 1.5;
  CHECK_THROWS_AS(render_face(bad), ValueError);
}

TEST_CASE("age oracle inverts the render exactly") {
  Rng rng(303);
  double worst = 0.0;
  for (int age = kMinAge; age <= kMaxAge; ++age) {
    FaceSpec spec = make_spec(rng, age);
    AgeEstimate est = oracle_age(render_face(spec));
    worst = std::max(worst, std::fabs(est.age - age));
    CHECK(est.confidence > 0.999);
  }
  CHECK(worst < 0.01);
  CHECK_THROWS_AS(oracle_age(Tensor::zeros({8, 8})), ShapeError);
}

TEST_CASE("age oracle on a blank image") {
  AgeEstimate est = oracle_age(Tensor::zeros({kImageSize, kImageSize}));
  CHECK(est.hair_estimate == doctest::Approx(21.25).epsilon(1e-9));
  CHECK(est.wrinkle_estimate == doctest::Approx(0.0));
  CHECK(est.age == doctest::Approx(10.625).epsilon(1e-9));
  CHECK(est.confidence == doctest::Approx(0.0));
}

TEST_CASE("region masks partition the image") {
  Rng rng(304);
  FaceSpec spec = make_spec(rng, 50);
  RegionMasks m = region_masks(spec);
  int hair = 0, wrinkle = 0, face = 0;
  for (int i = 0; i < kImageSize * kImageSize; ++i) {
    hair += m.hair[i];
    wrinkle += m.wrinkle[i];
    face += m.face[i];
    CHECK(m.hair[i] + m.wrinkle[i] + m.face[i] <= 1);
  }
  CHECK(hair == 3 * kImageSize);
  CHECK(wrinkle == 4 * kImageSize);
  CHECK(face > 20);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < kImageSize; ++c) CHECK(m.face[r * kImageSize + c] == 0);

  // The face mask traces the bright elliptical patch in the render.
  Tensor img = render_face(spec);
  for (int r = 7; r < kImageSize; ++r)
    for (int c = 0; c < kImageSize; ++c) {
      const int i = r * kImageSize + c;
      if (m.face[i])
        CHECK(img.at(i) > -0.5f);
      else
        CHECK(img.at(i) < -0.5f);
    }
}

TEST_CASE("identity embedding is unit norm and age independent") {
  Rng rng(305);
  FaceSpec spec = make_spec(rng, 30);
  Tensor e = extract_id_embedding(spec);
  CHECK(e.shape() == Shape{1, 16});
  double norm = 0.0;
  for (int i = 0; i < 16; ++i) norm += e.at(i) * e.at(i);
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-6));

  FaceSpec aged = spec;
  aged.age = 80;
  aged.noise_key ^= 0xbeef;
  Tensor e2 = extract_id_embedding(aged);
  for (int i = 0; i < 16; ++i) CHECK(e.at(i) == e2.at(i));

  FaceSpec other = make_spec(rng, 30);
  Tensor e3 = extract_id_embedding(other);
  double diff = 0.0;
  for (int i = 0; i < 16; ++i) diff += std::fabs(e.at(i) - e3.at(i));
  CHECK(diff > 1e-3);
}

TEST_CASE("age signature is smooth and local") {
  auto f20 = age_signature(20);
  auto f25 = age_signature(25);
  auto f60 = age_signature(60);
  auto cos_d = [](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
  };
  CHECK(cos_d(f20, f25) > cos_d(f20, f60));
  CHECK(cos_d(f20, f20) == doctest::Approx(1.0));
  CHECK_THROWS_AS(age_signature(0), ValueError);
}

TEST_CASE("age embedding carries bounded identity leakage") {
  RenderConstants quiet = RenderConstants::defaults();
  quiet.age_noise = 0.0;

  Rng rng(306);
  FaceSpec spec = make_spec(rng, 40);
  FaceSpec centered = spec;
  centered.u.fill(0.0);

  Tensor e0 = extract_age_embedding(centered, quiet);
  auto f = age_signature(40);
  for (int i = 0; i < 16; ++i) CHECK(e0.at(i) == doctest::Approx(f[i]).epsilon(1e-6));

  Tensor e = extract_age_embedding(spec, quiet);
  double unorm = 0.0;
  for (double x : spec.u) unorm += x * x;
  unorm = std::sqrt(unorm);
  CHECK(l2(e.values(), f) <= quiet.leak_norm * unorm + 1e-6);
  CHECK(l2(e.values(), f) > 1e-4);

  // Same spec, same stream: reproducible with noise on.
  Tensor n1 = extract_age_embedding(spec);
  Tensor n2 = extract_age_embedding(spec);
  for (int i = 0; i < 16; ++i) CHECK(n1.at(i) == n2.at(i));
}

TEST_CASE("mean embedding error shrinks with sample count") {
  const int age = 40;
  auto mean_err = [&](int n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> sum(16, 0.0);
    for (int i = 0; i < n; ++i) {
      FaceSpec s = make_spec(rng, age);
      Tensor e = extract_age_embedding(s);
      for (int j = 0; j < 16; ++j) sum[j] += e.at(j);
    }
    auto f = age_signature(age);
    double err = 0.0;
    for (int j = 0; j < 16; ++j) {
      const double d = sum[j] / n - f[j];
      err += d * d;
    }
    return std::sqrt(err);
  };
  const double e100 = mean_err(100, 881);
  const double e1600 = mean_err(1600, 882);
  CHECK(e1600 < 0.5 * e100);
}

TEST_CASE("identity clusters are quadrants") {
  FaceSpec s;
  s.age = 30;
  s.u = {-0.5, -0.5, 0, 0, 0, 0, 0, 0};
  CHECK(identity_cluster(s) == 0);
  s.u[1] = 0.5;
  CHECK(identity_cluster(s) == 1);
  s.u[0] = 0.5;
  CHECK(identity_cluster(s) == 3);
  s.u[1] = -0.5;
  CHECK(identity_cluster(s) == 2);
}

TEST_CASE("codebook accumulates means per age") {
  AgeCodebook cb;
  cb.accumulate(30, std::vector<float>(16, 1.0f));
  cb.accumulate(30, std::vector<float>(16, 3.0f));
  cb.accumulate(60, std::vector<float>(16, 5.0f));
  CHECK(cb.count(30) == 2);
  CHECK_THROWS_AS(cb.entry(30), ValueError);  // not finalized yet
  cb.finalize();
  CHECK(cb.entry(30)[0] == doctest::Approx(2.0f));
  CHECK(cb.entry(60)[7] == doctest::Approx(5.0f));
  CHECK(cb.ages() == std::vector<int>{30, 60});
  CHECK_THROWS_AS(cb.entry(40), ValueError);
  CHECK_THROWS_AS(cb.accumulate(30, std::vector<float>(16, 1.0f)), ValueError);
  CHECK_THROWS_AS(cb.finalize(), ValueError);

  AgeCodebook empty;
  CHECK_THROWS_AS(empty.finalize(), ValueError);
  CHECK_THROWS_AS(empty.accumulate(0, std::vector<float>(16, 1.0f)), ValueError);
  CHECK_THROWS_AS(empty.accumulate(30, std::vector<float>(4, 1.0f)), ShapeError);
}

TEST_CASE("codebook json round trip") {
  AgeCodebook cb;
  Rng rng(307);
  for (int i = 0; i < 50; ++i) {
    FaceSpec s = make_spec(rng, 25);
    cb.accumulate(25, extract_age_embedding(s).values());
  }
  cb.finalize();
  const char* path = "codebook_probe.json";
  cb.save(path);
  AgeCodebook loaded = AgeCodebook::load(path);
  CHECK(loaded.attribute() == "age");
  CHECK(loaded.count(25) == 50);
  for (int i = 0; i < 16; ++i) CHECK(loaded.entry(25)[i] == cb.entry(25)[i]);
  std::remove(path);
  CHECK_THROWS_AS(AgeCodebook::load("missing_codebook.json"), IoError);
}

TEST_CASE("cosine similarity") {
  std::vector<float> a = {1, 0, 0, 0};
  std::vector<float> b = {0, 1, 0, 0};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
  CHECK_THROWS_AS(cosine_similarity(a, std::vector<float>(3, 1.0f)), ShapeError);
  CHECK_THROWS_AS(cosine_similarity(a, std::vector<float>(4, 0.0f)), ValueError);
}

TEST_CASE("per-cluster codebook entries stay aligned with the overall code") {
  Rng rng(308);
  std::vector<DataRecord> records;
  for (int cluster = 0; cluster < 4; ++cluster) {
    for (int age : {20, 50}) {
      for (int i = 0; i < 250; ++i) {
        FaceSpec s = make_spec(rng, age);
        s.u[0] = (cluster & 2 ? 1.0 : -1.0) * (0.05 + 0.9 * rng.uniform());
        s.u[1] = (cluster & 1 ? 1.0 : -1.0) * (0.05 + 0.9 * rng.uniform());
        DataRecord rec;
        rec.spec = s;
        rec.e_age = extract_age_embedding(s);
        rec.age = age;
        records.push_back(std::move(rec));
      }
    }
  }
  auto reports = codebook_purity(records);
  CHECK(reports.size() == 8);
  for (const auto& r : reports) {
    CHECK(r.cluster_count == 250);
    INFO("age ", r.age, " cluster ", r.cluster, " cosine ", r.cosine);
    CHECK(r.cosine >= 0.97);
  }
}

TEST_CASE("dataset generation is reproducible and well formed") {
  auto a = generate_dataset(120, 909, "uniform");
  auto b = generate_dataset(120, 909, "uniform");
  REQUIRE(a.size() == 120);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].age == b[i].age);
    for (int j = 0; j < a[i].image.numel(); ++j) CHECK(a[i].image.at(j) == b[i].image.at(j));
    for (int j = 0; j < 16; ++j) CHECK(a[i].e_age.at(j) == b[i].e_age.at(j));
  }
  auto c = generate_dataset(120, 910, "uniform");
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i) differs |= a[i].age != c[i].age;
  CHECK(differs);

  for (const auto& r : a) {
    CHECK(r.age >= kMinAge);
    CHECK(r.age <= kMaxAge);
    CHECK(static_cast<int>(r.caption.size()) == kCaptionLen);
    // Captions carry no age information.
    for (int tok : r.caption) CHECK(tok < kYearsToken);
    CHECK(r.age_phrase[0] == kAgeTokenBase + r.age - kMinAge);
    AgeEstimate est = oracle_age(r.image);
    CHECK(std::fabs(est.age - r.age) < 0.01);
  }

  auto bal = generate_dataset(170, 909, "balanced");
  std::map<int, int> hist;
  for (const auto& r : bal) ++hist[r.age];
  CHECK(static_cast<int>(hist.size()) == 85);
  for (const auto& [age, n] : hist) CHECK(n == 2);

  CHECK_THROWS_AS(generate_dataset(0, 1, "uniform"), ValueError);
  CHECK_THROWS_AS(generate_dataset(10, 1, "gaussian"), ValueError);
}
