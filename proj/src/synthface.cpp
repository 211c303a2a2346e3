#include "agediff/synthface.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "agediff/error.hpp"
#include "agediff/rng.hpp"

namespace agediff {

namespace {

constexpr uint64_t kStreamIdentity = 1;
constexpr uint64_t kStreamAge = 2;
constexpr uint64_t kStreamBg = 3;
constexpr uint64_t kStreamAgeNoise = 4;

constexpr double kPi = 3.14159265358979323846;
constexpr double kGolden = 2.39996322972865332;

// Fixed 16x8 mixing matrix of the identity feature map.
const std::vector<double>& id_feature_matrix() {
  static const std::vector<double> w = [] {
    Rng rng = Rng::derive(0x1d5eedf00du, {11});
    std::vector<double> m(16 * 8);
    for (double& x : m) x = 0.35 * rng.normal();
    return m;
  }();
  return w;
}

// Fixed 16x8 leakage matrix, rescaled to unit operator norm.
const std::vector<double>& unit_leakage_matrix() {
  static const std::vector<double> g = [] {
    Rng rng = Rng::derive(0x1d5eedf00du, {23});
    std::vector<double> m(16 * 8);
    for (double& x : m) x = rng.normal();
    // Power iteration on G^T G for the top singular value.
    std::vector<double> v(8);
    for (double& x : v) x = rng.normal();
    double sigma = 1.0;
    for (int it = 0; it < 200; ++it) {
      std::vector<double> gv(16, 0.0);
      for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 8; ++j) gv[i] += m[i * 8 + j] * v[j];
      std::vector<double> gtgv(8, 0.0);
      for (int j = 0; j < 8; ++j)
        for (int i = 0; i < 16; ++i) gtgv[j] += m[i * 8 + j] * gv[i];
      double norm = 0.0;
      for (double x : gtgv) norm += x * x;
      norm = std::sqrt(norm);
      for (int j = 0; j < 8; ++j) v[j] = gtgv[j] / norm;
      double gv2 = 0.0;
      for (double x : gv) gv2 += x * x;
      sigma = std::sqrt(gv2);
    }
    for (double& x : m) x /= sigma;
    return m;
  }();
  return g;
}

void check_spec(const FaceSpec& spec) {
  if (spec.age < kMinAge || spec.age > kMaxAge)
    throw ValueError("face: age " + std::to_string(spec.age) + " outside [" +
                     std::to_string(kMinAge) + ", " + std::to_string(kMaxAge) + "]");
  for (double x : spec.u)
    if (!(x >= -1.0 && x <= 1.0))
      throw ValueError("face: identity factor outside [-1, 1]");
}

struct Ellipse {
  double cx, cy, rx, ry;
};

Ellipse face_ellipse(const FaceSpec& s) {
  return {7.5 + 1.5 * s.u[0], 11.0 + 1.0 * s.u[1], 5.0 + 1.5 * s.u[2],
          3.5 + 0.8 * s.u[3]};
}

bool inside(const Ellipse& e, int row, int col) {
  const double dx = (col - e.cx) / e.rx;
  const double dy = (row - e.cy) / e.ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

const RenderConstants& RenderConstants::defaults() {
  static const RenderConstants rc;
  return rc;
}

std::vector<std::string> FaceSpec::caption_words() const {
  auto pick4 = [](double x, const char* a, const char* b, const char* c, const char* d) {
    return x < -0.5 ? a : x < 0.0 ? b : x < 0.5 ? c : d;
  };
  std::vector<std::string> words;
  words.push_back(pick4(u[2], "narrow", "oval", "round", "wide"));
  words.push_back("face");
  words.push_back(pick4(u[4], "pale", "fair", "tan", "deep"));
  words.push_back("skin");
  words.push_back((noise_key & 1) ? "mottled" : "plain");
  words.push_back("background");
  return words;
}

Tensor render_face(const FaceSpec& spec, const RenderConstants& rc) {
  check_spec(spec);
  const double af = static_cast<double>(spec.age) / kMaxAge;
  const double hair = rc.hair_base + rc.hair_gain * af;
  const double amp = rc.wrinkle_gain * af;
  const double tone = rc.tone_base + rc.tone_gain * spec.u[4];
  const Ellipse ell = face_ellipse(spec);
  Rng bg_rng = Rng::derive(spec.noise_key, {kStreamBg});

  Tensor img = Tensor::zeros({kImageSize, kImageSize});
  auto& px = img.mutable_values();
  for (int r = 0; r < kImageSize; ++r) {
    for (int c = 0; c < kImageSize; ++c) {
      double v;
      if (r <= 2) {
        v = hair;
      } else if (r <= 6) {
        v = tone + amp * ((c % 2 == 0) ? 1.0 : -1.0);
      } else if (inside(ell, r, c)) {
        v = tone + rc.pattern_gain *
                       (spec.u[5] * std::cos(kPi * c / 8.0) +
                        spec.u[6] * std::cos(kPi * r / 8.0) +
                        spec.u[7] * std::cos(kPi * (r + c) / 8.0));
      } else {
        v = rc.bg_level + rc.bg_noise * (2.0 * bg_rng.uniform() - 1.0);
      }
      px[static_cast<size_t>(r) * kImageSize + c] =
          static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
  }
  return img;
}

AgeEstimate oracle_age(const Tensor& image, const RenderConstants& rc) {
  if (image.shape() != Shape{kImageSize, kImageSize})
    throw ShapeError("oracle: image must be " + std::to_string(kImageSize) + "x" +
                     std::to_string(kImageSize));
  const auto& px = image.values();

  double hair_sum = 0.0;
  for (int r = 0; r <= 2; ++r)
    for (int c = 0; c < kImageSize; ++c) hair_sum += px[r * kImageSize + c];
  const double hair_mean = hair_sum / (3.0 * kImageSize);
  const double a_hair =
      std::clamp((hair_mean - rc.hair_base) / rc.hair_gain, 0.0, 1.0) * kMaxAge;

  // The alternating-column stripe amplitude; the flat tone cancels.
  double amp_sum = 0.0;
  for (int r = 3; r <= 6; ++r)
    for (int c = 0; c < kImageSize; ++c)
      amp_sum += px[r * kImageSize + c] * ((c % 2 == 0) ? 1.0 : -1.0);
  const double amp = amp_sum / (4.0 * kImageSize);
  const double a_wrinkle = std::clamp(amp / rc.wrinkle_gain, 0.0, 1.0) * kMaxAge;

  AgeEstimate est;
  est.hair_estimate = a_hair;
  est.wrinkle_estimate = a_wrinkle;
  est.age = std::clamp(0.5 * (a_hair + a_wrinkle), static_cast<double>(kMinAge),
                       static_cast<double>(kMaxAge));
  est.confidence = std::max(0.0, 1.0 - std::fabs(a_hair - a_wrinkle) / 10.0);
  return est;
}

RegionMasks region_masks(const FaceSpec& spec) {
  check_spec(spec);
  const Ellipse ell = face_ellipse(spec);
  RegionMasks m;
  m.hair.assign(kImageSize * kImageSize, 0);
  m.wrinkle.assign(kImageSize * kImageSize, 0);
  m.face.assign(kImageSize * kImageSize, 0);
  for (int r = 0; r < kImageSize; ++r)
    for (int c = 0; c < kImageSize; ++c) {
      const size_t i = static_cast<size_t>(r) * kImageSize + c;
      if (r <= 2)
        m.hair[i] = 1;
      else if (r <= 6)
        m.wrinkle[i] = 1;
      else if (inside(ell, r, c))
        m.face[i] = 1;
    }
  return m;
}

Tensor extract_id_embedding(const FaceSpec& spec) {
  check_spec(spec);
  const auto& w = id_feature_matrix();
  std::vector<float> e(16);
  double norm2 = 0.0;
  for (int i = 0; i < 16; ++i) {
    double s = i * kGolden;
    for (int j = 0; j < 8; ++j) s += w[i * 8 + j] * spec.u[j];
    const double v = std::cos(s);
    e[i] = static_cast<float>(v);
    norm2 += v * v;
  }
  const float inv = static_cast<float>(1.0 / std::sqrt(norm2));
  for (float& v : e) v *= inv;
  return Tensor::from_values({1, 16}, std::move(e));
}

std::vector<double> age_signature(int age) {
  if (age < kMinAge || age > kMaxAge)
    throw ValueError("age signature: age outside range");
  std::vector<double> f(16);
  for (int j = 0; j < 16; ++j) {
    const double center = 1.0 + 84.0 * j / 15.0;
    const double d = age - center;
    f[j] = std::exp(-d * d / (2.0 * 7.0 * 7.0));
  }
  return f;
}

Tensor extract_age_embedding(const FaceSpec& spec, const RenderConstants& rc) {
  check_spec(spec);
  const std::vector<double> f = age_signature(spec.age);
  const auto& g = unit_leakage_matrix();
  Rng noise = Rng::derive(spec.noise_key, {kStreamAgeNoise});
  std::vector<float> e(16);
  for (int i = 0; i < 16; ++i) {
    double leak = 0.0;
    for (int j = 0; j < 8; ++j) leak += g[i * 8 + j] * spec.u[j];
    e[i] = static_cast<float>(f[i] + rc.leak_norm * leak + rc.age_noise * noise.normal());
  }
  return Tensor::from_values({1, 16}, std::move(e));
}

int identity_cluster(const FaceSpec& spec) {
  return (spec.u[0] >= 0.0 ? 2 : 0) + (spec.u[1] >= 0.0 ? 1 : 0);
}

std::vector<DataRecord> generate_dataset(int n, uint64_t seed, const std::string& age_dist,
                                         const RenderConstants& rc) {
  if (n < 1) throw ValueError("dataset: size must be positive");
  const bool balanced = age_dist == "balanced";
  if (!balanced && age_dist != "uniform")
    throw ValueError("dataset: unknown age distribution '" + age_dist + "'");

  std::vector<DataRecord> records;
  records.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const uint64_t idx = static_cast<uint64_t>(i);
    Rng id_rng = Rng::derive(seed, {kStreamIdentity, idx});
    FaceSpec spec;
    for (double& x : spec.u) x = 2.0 * id_rng.uniform() - 1.0;
    if (balanced) {
      spec.age = kMinAge + i % (kMaxAge - kMinAge + 1);
    } else {
      Rng age_rng = Rng::derive(seed, {kStreamAge, idx});
      spec.age = age_rng.uniform_int(kMinAge, kMaxAge);
    }
    spec.noise_key = Rng::derive(seed, {idx}).next_u64();

    DataRecord rec;
    rec.spec = spec;
    rec.image = render_face(spec, rc);
    rec.e_id = extract_id_embedding(spec);
    rec.e_age = extract_age_embedding(spec, rc);
    rec.caption = encode_caption(spec.caption_words());
    rec.age_phrase = age_phrase_tokens(spec.age);
    rec.age = spec.age;
    records.push_back(std::move(rec));
  }
  return records;
}

void AgeCodebook::accumulate(int age, const std::vector<float>& e) {
  if (finalized_) throw ValueError("codebook: already finalized");
  if (age < kMinAge || age > kMaxAge)
    throw ValueError("codebook: age " + std::to_string(age) + " outside range");
  if (e.size() != 16) throw ShapeError("codebook: embedding must have 16 values");
  Cell& cell = cells_[age];
  if (cell.sum.empty()) cell.sum.assign(16, 0.0);
  for (int i = 0; i < 16; ++i) cell.sum[i] += e[i];
  ++cell.n;
}

void AgeCodebook::finalize() {
  if (finalized_) throw ValueError("codebook: already finalized");
  if (cells_.empty()) throw ValueError("codebook: no samples accumulated");
  for (auto& [age, cell] : cells_) {
    cell.mean.resize(16);
    for (int i = 0; i < 16; ++i)
      cell.mean[i] = static_cast<float>(cell.sum[i] / cell.n);
  }
  finalized_ = true;
}

bool AgeCodebook::has(int age) const { return cells_.count(age) > 0; }

const std::vector<float>& AgeCodebook::entry(int age) const {
  if (!finalized_) throw ValueError("codebook: finalize before lookup");
  auto it = cells_.find(age);
  if (it == cells_.end())
    throw ValueError("codebook: no entry for age " + std::to_string(age));
  return it->second.mean;
}

int AgeCodebook::nearest(int age) const {
  if (cells_.empty()) throw ValueError("codebook: empty");
  int best = cells_.begin()->first;
  for (const auto& [a, cell] : cells_)
    if (std::abs(a - age) < std::abs(best - age)) best = a;
  return best;
}

int AgeCodebook::count(int age) const {
  auto it = cells_.find(age);
  return it == cells_.end() ? 0 : it->second.n;
}

std::vector<int> AgeCodebook::ages() const {
  std::vector<int> out;
  out.reserve(cells_.size());
  for (const auto& [age, cell] : cells_) out.push_back(age);
  return out;
}

void AgeCodebook::save(const std::string& path) const {
  if (!finalized_) throw ValueError("codebook: finalize before saving");
  nlohmann::json j;
  j["attribute"] = attribute_;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [age, cell] : cells_) {
    nlohmann::json e;
    e["value"] = age;
    e["count"] = cell.n;
    e["mean"] = cell.mean;
    entries.push_back(std::move(e));
  }
  j["entries"] = std::move(entries);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

AgeCodebook AgeCodebook::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("codebook parse: " + std::string(e.what()));
  }
  AgeCodebook cb;
  try {
    cb.attribute_ = j.at("attribute").get<std::string>();
    for (const auto& e : j.at("entries")) {
      Cell cell;
      cell.n = e.at("count").get<int>();
      cell.mean = e.at("mean").get<std::vector<float>>();
      if (cell.mean.size() != 16) throw IoError("codebook entry width");
      cell.sum.assign(16, 0.0);
      cb.cells_[e.at("value").get<int>()] = std::move(cell);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("codebook fields: " + std::string(e.what()));
  }
  if (cb.cells_.empty()) throw IoError("codebook is empty");
  cb.finalized_ = true;
  return cb;
}

AgeCodebook build_codebook(const std::vector<DataRecord>& records) {
  if (records.empty()) throw ValueError("codebook: no records");
  AgeCodebook cb;
  for (const auto& r : records) cb.accumulate(r.age, r.e_age.values());
  cb.finalize();
  return cb;
}

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size() || a.empty())
    throw ShapeError("cosine: size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ValueError("cosine: zero vector");
  return dot / std::sqrt(na * nb);
}

std::vector<PurityReport> codebook_purity(const std::vector<DataRecord>& records) {
  AgeCodebook overall = build_codebook(records);
  std::map<int, AgeCodebook> by_cluster;
  for (const auto& r : records)
    by_cluster[identity_cluster(r.spec)].accumulate(r.age, r.e_age.values());

  std::vector<PurityReport> out;
  for (auto& [cluster, cb] : by_cluster) {
    cb.finalize();
    for (int age : cb.ages()) {
      PurityReport p;
      p.age = age;
      p.cluster = cluster;
      p.cluster_count = cb.count(age);
      p.cosine = cosine_similarity(cb.entry(age), overall.entry(age));
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace agediff
