#include "agediff/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "agediff/error.hpp"
#include "agediff/io.hpp"
#include "agediff/optimizer.hpp"
#include "agediff/tape.hpp"

namespace agediff {

namespace {
constexpr uint64_t kStreamEncoderInit = 0x1de0;
constexpr uint64_t kStreamEncoderShuffle = 0x1de1;
constexpr uint64_t kStreamCalibration = 0x1de2;
constexpr uint64_t kStreamTestSpecs = 0x7e57;
constexpr uint64_t kStreamEvalEdit = 0xed17;
constexpr uint64_t kStreamPrior = 0x9107;
constexpr uint64_t kStreamAttention = 0xa77e;

Tensor flat_row(const Tensor& image) {
  return reshape(image, {1, kImageSize * kImageSize});
}

FaceSpec random_spec(Rng& rng) {
  FaceSpec s;
  for (auto& x : s.u) x = rng.uniform() * 2.0 - 1.0;
  s.age = rng.uniform_int(kMinAge, kMaxAge);
  s.noise_key = rng.next_u64();
  return s;
}

double mean_of(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double stddev_of(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

IdentityEncoder IdentityEncoder::init(Rng& rng) {
  IdentityEncoder e;
  e.w1 = Tensor::randn({kImageSize * kImageSize, 64}, rng, 1.0 / 16.0);
  e.b1 = Tensor::zeros({1, 64});
  e.w2 = Tensor::randn({64, 8}, rng, 1.0 / 8.0);
  e.b2 = Tensor::zeros({1, 8});
  e.feat_mean = Tensor::zeros({1, kIdFeatDim});
  return e;
}

std::vector<Tensor> IdentityEncoder::params() const { return {w1, b1, w2, b2}; }

Tensor IdentityEncoder::hidden(const Tensor& image) const {
  if (image.shape() != Shape{kImageSize, kImageSize})
    throw ShapeError("identity encoder wants a " + std::to_string(kImageSize) + "x" +
                     std::to_string(kImageSize) + " image");
  return silu(add_rows(matmul(flat_row(image), w1), b1));
}

Tensor IdentityEncoder::predict_u(const Tensor& image) const {
  return add_rows(matmul(hidden(image), w2), b2);
}

std::vector<double> IdentityEncoder::embedding(const Tensor& image) const {
  const Tensor pred = predict_u(image);
  std::array<double, 8> x{};
  for (int k = 0; k < 8; ++k)
    x[static_cast<size_t>(k)] = static_cast<double>(pred.values()[static_cast<size_t>(k)]);

  // Scales make each feature unit-variance when the factors are iid U[-1, 1].
  std::vector<double> f;
  f.reserve(static_cast<size_t>(kIdFeatDim));
  const double s1 = std::sqrt(3.0);
  const double s2 = 3.0;
  const double sq = std::sqrt(45.0 / 4.0);
  const double s3 = std::sqrt(27.0);
  for (int i = 0; i < 8; ++i) f.push_back(x[static_cast<size_t>(i)] * s1);
  for (int i = 0; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j)
      f.push_back(x[static_cast<size_t>(i)] * x[static_cast<size_t>(j)] * s2);
  for (int i = 0; i < 8; ++i) {
    const double xi = x[static_cast<size_t>(i)];
    f.push_back((xi * xi - 1.0 / 3.0) * sq);
  }
  for (int i = 0; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j)
      for (int k = j + 1; k < 8; ++k)
        f.push_back(x[static_cast<size_t>(i)] * x[static_cast<size_t>(j)] *
                    x[static_cast<size_t>(k)] * s3);
  return f;
}

IdentityEncoder train_identity_encoder(const std::vector<DataRecord>& data,
                                       const EncoderTrainConfig& cfg) {
  if (data.size() < 20) throw ValueError("identity encoder needs at least 20 records");
  if (cfg.holdout <= 0.0 || cfg.holdout >= 0.5)
    throw ValueError("identity encoder holdout must be in (0, 0.5)");

  Rng init_rng = Rng::derive(cfg.seed, {kStreamEncoderInit});
  IdentityEncoder enc = IdentityEncoder::init(init_rng);
  for (auto& p : enc.params()) p.set_requires_grad(true);
  Adam opt(enc.params(), cfg.learning_rate);

  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng shuffle_rng = Rng::derive(cfg.seed, {kStreamEncoderShuffle});
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(
                  shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);

  const size_t n_val = std::max<size_t>(1, static_cast<size_t>(
                           cfg.holdout * static_cast<double>(data.size())));
  std::vector<size_t> val(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<size_t> train(order.begin() + static_cast<long>(n_val), order.end());

  auto target_row = [&](size_t idx) {
    std::vector<float> u(8);
    for (int k = 0; k < 8; ++k)
      u[static_cast<size_t>(k)] = static_cast<float>(data[idx].spec.u[static_cast<size_t>(k)]);
    return Tensor::from_values({1, 8}, std::move(u));
  };

  Tape tape;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = train.size(); i > 1; --i)
      std::swap(train[i - 1], train[static_cast<size_t>(
                    shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);
    for (size_t start = 0; start < train.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(train.size(), start + static_cast<size_t>(cfg.batch_size));
      Tape::Scope scope(tape);
      Tensor sum;
      for (size_t i = start; i < stop; ++i) {
        Tensor err = mean_all(square(sub(enc.predict_u(data[train[i]].image),
                                         target_row(train[i]))));
        sum = sum.defined() ? add(sum, err) : err;
      }
      Tensor loss = scale(sum, 1.0 / static_cast<double>(stop - start));
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
      tape.reset();
    }
  }
  for (auto& p : enc.params()) p.set_requires_grad(false);

  // Validation against the predict-the-training-mean baseline.
  std::array<double, 8> mean_u{};
  for (size_t i : train)
    for (int k = 0; k < 8; ++k) mean_u[static_cast<size_t>(k)] += data[i].spec.u[static_cast<size_t>(k)];
  for (auto& m : mean_u) m /= static_cast<double>(train.size());
  double mse = 0.0, base = 0.0;
  for (size_t i : val) {
    const Tensor pred = enc.predict_u(data[i].image);
    for (int k = 0; k < 8; ++k) {
      const double truth = data[i].spec.u[static_cast<size_t>(k)];
      const double d = static_cast<double>(pred.values()[static_cast<size_t>(k)]) - truth;
      const double db = mean_u[static_cast<size_t>(k)] - truth;
      mse += d * d;
      base += db * db;
    }
  }
  mse /= static_cast<double>(val.size() * 8);
  base /= static_cast<double>(val.size() * 8);
  if (!(mse < base))
    throw TrainError("identity encoder failed to beat the mean baseline: val mse " +
                     std::to_string(mse) + " vs " + std::to_string(base));
  enc.val_mse = mse;
  enc.frozen = true;

  // Calibration: feature mean over fresh renders, then the cross-identity
  // cosine distribution.
  Rng calib_rng = Rng::derive(cfg.seed, {kStreamCalibration});
  std::vector<double> acc(static_cast<size_t>(kIdFeatDim), 0.0);
  for (int i = 0; i < cfg.calib_samples; ++i) {
    const std::vector<double> f = enc.embedding(render_face(random_spec(calib_rng)));
    for (int k = 0; k < kIdFeatDim; ++k) acc[static_cast<size_t>(k)] += f[static_cast<size_t>(k)];
  }
  std::vector<float> mean_feat(static_cast<size_t>(kIdFeatDim));
  for (int k = 0; k < kIdFeatDim; ++k)
    mean_feat[static_cast<size_t>(k)] =
        static_cast<float>(acc[static_cast<size_t>(k)] / cfg.calib_samples);
  enc.feat_mean = Tensor::from_values({1, kIdFeatDim}, std::move(mean_feat));

  std::vector<double> sims;
  sims.reserve(static_cast<size_t>(cfg.calib_pairs));
  for (int i = 0; i < cfg.calib_pairs; ++i) {
    const Tensor a = render_face(random_spec(calib_rng));
    const Tensor b = render_face(random_spec(calib_rng));
    sims.push_back(identity_similarity(enc, a, b));
  }
  enc.calib_mean = mean_of(sims);
  enc.calib_std = stddev_of(sims, enc.calib_mean);
  std::sort(sims.begin(), sims.end());
  enc.calib_p95 = sims[static_cast<size_t>(0.95 * static_cast<double>(sims.size()))];
  return enc;
}

double identity_similarity(const IdentityEncoder& enc, const Tensor& a,
                           const Tensor& b) {
  if (!enc.frozen) throw ValueError("identity encoder is not trained");
  const std::vector<double> fa = enc.embedding(a);
  const std::vector<double> fb = enc.embedding(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int k = 0; k < kIdFeatDim; ++k) {
    const double xa = fa[static_cast<size_t>(k)] -
                      static_cast<double>(enc.feat_mean.values()[static_cast<size_t>(k)]);
    const double xb = fb[static_cast<size_t>(k)] -
                      static_cast<double>(enc.feat_mean.values()[static_cast<size_t>(k)]);
    dot += xa * xb;
    na += xa * xa;
    nb += xb * xb;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

void save_identity_encoder(const std::string& path, const IdentityEncoder& enc) {
  Checkpoint ck;
  ck.meta["kind"] = "identity_encoder";
  ck.meta["calib_mean"] = enc.calib_mean;
  ck.meta["calib_std"] = enc.calib_std;
  ck.meta["calib_p95"] = enc.calib_p95;
  ck.meta["val_mse"] = enc.val_mse;
  ck.meta["frozen"] = enc.frozen;
  ck.tensors = {{"w1", enc.w1},
                {"b1", enc.b1},
                {"w2", enc.w2},
                {"b2", enc.b2},
                {"feat_mean", enc.feat_mean}};
  save_checkpoint(path, ck);
}

IdentityEncoder load_identity_encoder(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.meta.value("kind", "") != "identity_encoder")
    throw IoError(path + ": not an identity encoder checkpoint");
  Rng rng(0);
  IdentityEncoder enc = IdentityEncoder::init(rng);
  load_into(ck, {{"w1", enc.w1},
                 {"b1", enc.b1},
                 {"w2", enc.w2},
                 {"b2", enc.b2},
                 {"feat_mean", enc.feat_mean}});
  enc.calib_mean = ck.meta.at("calib_mean").get<double>();
  enc.calib_std = ck.meta.at("calib_std").get<double>();
  enc.calib_p95 = ck.meta.at("calib_p95").get<double>();
  enc.val_mse = ck.meta.at("val_mse").get<double>();
  enc.frozen = ck.meta.at("frozen").get<bool>();
  return enc;
}

std::vector<FaceSpec> make_test_specs(int n, uint64_t seed) {
  if (n < 1) throw ValueError("test split needs at least one spec");
  Rng rng = Rng::derive(seed, {kStreamTestSpecs});
  std::vector<FaceSpec> specs(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    FaceSpec& s = specs[static_cast<size_t>(i)];
    for (auto& x : s.u) x = rng.uniform() * 2.0 - 1.0;
    s.age = kMinAge + static_cast<int>((static_cast<int64_t>(i) * (kMaxAge - kMinAge + 1)) / n);
    s.noise_key = rng.next_u64();
  }
  return specs;
}

EvalReport evaluate_editing(const Model& model, const AgeCodebook& codebook,
                            const IdentityEncoder& encoder,
                            const std::vector<FaceSpec>& specs,
                            const std::vector<int>& targets, const TrainConfig& cfg,
                            uint64_t seed, EvalArtifacts* artifacts) {
  if (specs.empty()) throw ValueError("evaluation needs a non-empty test set");
  if (targets.empty()) throw ValueError("evaluation needs at least one target age");

  EvalReport report;
  report.targets = targets;
  report.manifest_hash = cfg.digest();
  if (artifacts) {
    artifacts->sources.clear();
    artifacts->edits.assign(targets.size(), {});
  }

  std::vector<Tensor> sources;
  std::vector<Tensor> ids;
  sources.reserve(specs.size());
  for (const auto& spec : specs) {
    sources.push_back(render_face(spec));
    ids.push_back(extract_id_embedding(spec));
  }
  if (artifacts) artifacts->sources = sources;

  const EditScales scales;
  double sim_sum = 0.0;
  for (size_t ti = 0; ti < targets.size(); ++ti) {
    const int target = targets[ti];
    double err_sum = 0.0;
    for (size_t si = 0; si < specs.size(); ++si) {
      Rng rng = Rng::derive(seed, {kStreamEvalEdit, ti, si});
      const Tensor edit =
          edit_age(model, codebook, ids[si], target, scales, cfg, rng, nullptr);
      err_sum += std::fabs(oracle_age(edit).age - static_cast<double>(target));
      sim_sum += identity_similarity(encoder, sources[si], edit);
      if (artifacts) artifacts->edits[ti].push_back(edit);
    }
    report.per_target_mae.push_back(err_sum / static_cast<double>(specs.size()));
  }
  report.avg_mae = mean_of(report.per_target_mae);
  report.mean_similarity =
      sim_sum / static_cast<double>(specs.size() * targets.size());
  return report;
}

double untrained_prior_mae(const Model& model, const AgeCodebook& codebook,
                           const std::vector<int>& targets, const TrainConfig& cfg,
                           uint64_t seed, int n_samples) {
  if (n_samples < 1) throw ValueError("prior baseline needs at least one sample");
  if (codebook.ages().empty()) throw ValueError("prior baseline needs a codebook");
  const Tensor null_id = Tensor::zeros({1, kEmbedDim});
  const int anchor_age = codebook.ages().front();
  const EditScales scales;
  std::vector<double> oracle_ages;
  oracle_ages.reserve(static_cast<size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    Rng rng = Rng::derive(seed, {kStreamPrior, static_cast<uint64_t>(i)});
    const Tensor sample =
        edit_age(model, codebook, null_id, anchor_age, scales, cfg, rng, nullptr);
    oracle_ages.push_back(oracle_age(sample).age);
  }
  double total = 0.0;
  for (int target : targets)
    for (double a : oracle_ages) total += std::fabs(a - static_cast<double>(target));
  return total / static_cast<double>(targets.size() * static_cast<size_t>(n_samples));
}

const EvalReport& AblationTable::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r.report;
  throw ValueError("no ablation row named " + name);
}

AblationTable run_ablations(const TrainConfig& stage1, const TrainConfig& stage2,
                            const std::vector<DataRecord>& data,
                            const AgeCodebook& codebook, const AgeProbe& probe,
                            const IdentityEncoder& encoder,
                            const std::vector<FaceSpec>& specs,
                            const std::vector<int>& targets, std::ostream* log,
                            const Model* full_model) {
  struct Variant {
    const char* name;
    bool age_branches;
    bool id_branch;
    bool acg;
  };
  const Variant variants[] = {
      {"full", true, true, true},
      {"no_age", false, true, true},
      {"no_id", true, false, true},
      {"no_acg", true, true, false},
  };

  AblationTable table;
  for (const Variant& v : variants) {
    TrainConfig c1 = stage1, c2 = stage2;
    c1.enable_age_branch = c2.enable_age_branch = v.age_branches;
    c1.enable_cage_branch = c2.enable_cage_branch = v.age_branches;
    c1.enable_id_branch = c2.enable_id_branch = v.id_branch;
    c2.enable_acg = v.acg;
    if (log) (*log) << "== variant " << v.name << "\n";
    const bool reuse = full_model != nullptr && std::string(v.name) == "full";
    Model trained = Model::init(c1.T, c1.seed);
    if (reuse) {
      if (full_model->T != c2.T)
        throw ConfigError("ablation: supplied full model was trained with T=" +
                          std::to_string(full_model->T) + " but config says T=" +
                          std::to_string(c2.T));
    } else {
      train_model(trained, data, codebook, nullptr, c1, log);
      train_model(trained, data, codebook, &probe, c2, log);
    }
    const Model& model = reuse ? *full_model : trained;
    EvalReport report =
        evaluate_editing(model, codebook, encoder, specs, targets, c2, c2.seed);
    if (log)
      (*log) << v.name << ": mae " << report.avg_mae << " sim "
             << report.mean_similarity << "\n";
    table.rows.push_back({v.name, std::move(report)});
  }
  return table;
}

AttentionMassReport attention_mass(const Model& model, const AgeCodebook& codebook,
                                   const std::vector<FaceSpec>& specs,
                                   const TrainConfig& cfg, uint64_t seed) {
  if (specs.empty()) throw ValueError("attention analysis needs test specs");
  constexpr int kTokens16 = kImageSize * kImageSize / 16;

  AttentionMassReport rep;
  const EditScales scales;
  for (size_t si = 0; si < specs.size(); ++si) {
    const FaceSpec& spec = specs[si];
    const RegionMasks masks = region_masks(spec);
    std::array<double, kTokens16> cov_age{}, cov_face{};
    for (int p = 0; p < kTokens16; ++p) {
      const int pr = (p / 4) * 4, pc = (p % 4) * 4;
      int n_age = 0, n_face = 0;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
          const size_t px = static_cast<size_t>((pr + y) * kImageSize + pc + x);
          if (masks.hair[px] || masks.wrinkle[px]) ++n_age;
          if (masks.face[px]) ++n_face;
        }
      cov_age[static_cast<size_t>(p)] = n_age / 16.0;
      cov_face[static_cast<size_t>(p)] = n_face / 16.0;
    }

    AttnCapture cap;
    Rng rng = Rng::derive(seed, {kStreamAttention, si});
    const int target = codebook.has(spec.age) ? spec.age : codebook.nearest(spec.age);
    (void)edit_age(model, codebook, extract_id_embedding(spec), target, scales, cfg,
                   rng, &cap);

    std::array<double, kTokens16> mass_age{}, mass_id{};
    int n_rec_age = 0, n_rec_id = 0;
    for (const AttnRecord& r : cap.records) {
      const bool is_age = r.branch == "age";
      if (!is_age && r.branch != "id") continue;
      if (r.rows != kTokens16) continue;
      std::array<double, kTokens16> dist{};
      for (int j = 0; j < r.cols; ++j) {
        double colsum = 0.0;
        for (int p = 0; p < r.rows; ++p)
          colsum += r.weights[static_cast<size_t>(p) * r.cols + j];
        if (colsum <= 0.0) continue;
        for (int p = 0; p < r.rows; ++p)
          dist[static_cast<size_t>(p)] +=
              r.weights[static_cast<size_t>(p) * r.cols + j] / colsum;
      }
      auto& mass = is_age ? mass_age : mass_id;
      auto& count = is_age ? n_rec_age : n_rec_id;
      for (int p = 0; p < kTokens16; ++p)
        mass[static_cast<size_t>(p)] += dist[static_cast<size_t>(p)] / r.cols;
      ++count;
    }
    if (n_rec_age == 0 || n_rec_id == 0)
      throw ValueError("attention analysis requires the age and id branches enabled");

    double a_on_a = 0.0, i_on_a = 0.0, a_on_f = 0.0, i_on_f = 0.0;
    for (int p = 0; p < kTokens16; ++p) {
      const double ma = mass_age[static_cast<size_t>(p)] / n_rec_age;
      const double mi = mass_id[static_cast<size_t>(p)] / n_rec_id;
      a_on_a += cov_age[static_cast<size_t>(p)] * ma;
      i_on_a += cov_age[static_cast<size_t>(p)] * mi;
      a_on_f += cov_face[static_cast<size_t>(p)] * ma;
      i_on_f += cov_face[static_cast<size_t>(p)] * mi;
    }
    rep.age_on_age_region.push_back(a_on_a);
    rep.id_on_age_region.push_back(i_on_a);
    rep.age_on_face_region.push_back(a_on_f);
    rep.id_on_face_region.push_back(i_on_f);
  }

  const size_t n = specs.size();
  std::vector<double> d_age(n), d_face(n);
  for (size_t i = 0; i < n; ++i) {
    d_age[i] = rep.age_on_age_region[i] - rep.id_on_age_region[i];
    d_face[i] = rep.id_on_face_region[i] - rep.age_on_face_region[i];
  }
  rep.age_region_margin = mean_of(d_age);
  rep.face_region_margin = mean_of(d_face);
  const double sd_age = stddev_of(d_age, rep.age_region_margin);
  const double sd_face = stddev_of(d_face, rep.face_region_margin);
  const double root_n = std::sqrt(static_cast<double>(n));
  rep.age_region_t = sd_age > 0.0 ? rep.age_region_margin / (sd_age / root_n) : 0.0;
  rep.face_region_t = sd_face > 0.0 ? rep.face_region_margin / (sd_face / root_n) : 0.0;
  rep.decoupled = rep.age_region_margin > 0.0 && rep.face_region_margin > 0.0 &&
                  rep.age_region_t >= 3.0 && rep.face_region_t >= 3.0;
  return rep;
}

void export_report(const EvalReport& report, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["targets"] = report.targets;
  j["per_target_mae"] = report.per_target_mae;
  j["avg_mae"] = report.avg_mae;
  j["mean_similarity"] = report.mean_similarity;
  j["manifest_hash"] = report.manifest_hash;
  j["grid_files"] = report.grid_files;
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("write failed for " + path);
}

EvalReport read_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad metrics file: " + e.what());
  }
  EvalReport r;
  r.targets = j.at("targets").get<std::vector<int>>();
  r.per_target_mae = j.at("per_target_mae").get<std::vector<double>>();
  r.avg_mae = j.at("avg_mae").get<double>();
  r.mean_similarity = j.at("mean_similarity").get<double>();
  r.manifest_hash = j.at("manifest_hash").get<std::string>();
  r.grid_files = j.at("grid_files").get<std::vector<std::string>>();
  return r;
}

std::string format_report_table(const std::vector<AblationRow>& rows) {
  if (rows.empty()) throw ValueError("no rows to format");
  std::string out = "variant";
  char buf[64];
  for (int t : rows[0].report.targets) {
    std::snprintf(buf, sizeof(buf), "%8s%d", "mae@", t);
    out += buf;
  }
  out += "     avg     sim\n";
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%-7s", row.name.c_str());
    out += buf;
    for (double mae : row.report.per_target_mae) {
      std::snprintf(buf, sizeof(buf), "%9.3f", mae);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), "%8.3f%8.3f\n", row.report.avg_mae,
                  row.report.mean_similarity);
    out += buf;
  }
  return out;
}

}  // namespace agediff
