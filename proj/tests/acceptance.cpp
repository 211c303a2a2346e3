// Acceptance gate. Each numbered criterion prints exactly one [PASS]/[FAIL]
// line with its measured numbers; the process exits nonzero if any fail.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "agediff/diffusion.hpp"
#include "agediff/editing.hpp"
#include "agediff/evaluation.hpp"
#include "agediff/gradcheck.hpp"
#include "agediff/io.hpp"
#include "agediff/tape.hpp"
#include "agediff/training.hpp"

using namespace agediff;
namespace fs = std::filesystem;
using DTensor = TensorT<double>;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned thresholds, one per criterion clause.
constexpr double kGradTol = 1e-4;            // 1: max relative gradient error
constexpr int kGradPathProbes = 110;         // 1: probes on the full loss path
constexpr double kMarginalTol = 0.02;        // 2: moment agreement
constexpr int kMarginalDraws = 10000;        // 2
constexpr double kReduceTol = 1e-6;          // 3: reduction and additivity
constexpr double kPurityMin = 0.97;          // 4: cluster-vs-overall cosine
constexpr int kPurityPerAgePerCluster = 200; // 4
constexpr double kTrainBudgetMin = 30.0;     // 5: stage I+II wall clock
constexpr int kRefStage1Steps = 16000;       // 5: reference config
constexpr int kRefStage2Steps = 8000;        // 5
constexpr double kMaeMax = 8.0;              // 6: oracle age MAE, years
constexpr double kPriorRatio = 0.5;          // 6: MAE vs untrained prior
constexpr double kSimSigmas = 3.0;           // 6: similarity vs calibration
constexpr double kAblAgeFactor = 2.0;        // 7: W/O Age MAE vs full
constexpr double kAblIdFactor = 0.5;         // 7: W/O ID similarity vs full
constexpr double kAblAcgSlack = 0.5;         // 7: full vs W/O ACG MAE, years
constexpr double kAblBudgetMin = 120.0;      // 7: wall clock
constexpr double kAttnTMin = 3.0;            // 8: margin t statistic

int g_failures = 0;

void report(int idx, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", idx, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double minutes_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << std::fixed << v;
  return s.str();
}

DTensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  DTensor t = DTensor::zeros(std::move(shape));
  for (double& x : t.mutable_values()) x = lo + (hi - lo) * rng.uniform();
  return t;
}

ConditionBundleT<double> bundle_for(const DataRecord& rec, const AgeCodebook& cb) {
  ConditionBundleT<double> b;
  b.caption = rec.caption;
  b.age_phrase = rec.age_phrase;
  b.e_id = cast<double>(rec.e_id);
  b.e_age = cast<double>(Tensor::from_values({1, kEmbedDim}, cb.entry(rec.age)));
  b.age = rec.age;
  return b;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f),
                     std::istreambuf_iterator<char>());
}

// --- criterion 1 -----------------------------------------------------------

struct GradStats {
  double max_rel_err = 0.0;
  int probes = 0;
  bool pass = true;
  std::string worst;
};

void fold(GradStats& acc, const GradCheckReport& rep, const char* label) {
  acc.probes += rep.probes;
  if (rep.max_rel_err > acc.max_rel_err) {
    acc.max_rel_err = rep.max_rel_err;
    acc.worst = label;
  }
  acc.pass = acc.pass && rep.pass;
}

GradStats run_gradient_suite() {
  GradStats acc;
  Rng rng(21);
  const double step = 1e-5;

  {  // dense chain: matmul, add_rows, silu, layer_norm, square, mean_all
    DTensor a = rand_tensor({4, 5}, rng), b = rand_tensor({5, 3}, rng);
    DTensor r = rand_tensor({1, 3}, rng);
    DTensor g = rand_tensor({3}, rng, 0.5, 1.5), bias = rand_tensor({3}, rng, -0.5, 0.5);
    auto loss = [&]() {
      return mean_all(square(layer_norm(silu(add_rows(matmul(a, b), r)), g, bias, 1e-5)));
    };
    fold(acc, grad_check<double>(loss, {a, b, r, g, bias}, step, kGradTol, 90, rng),
         "dense chain");
  }
  {  // softmax_rows, mul, detach, sum_all
    DTensor logits = rand_tensor({6, 7}, rng, -2.0, 2.0);
    DTensor w = rand_tensor({6, 7}, rng);
    auto loss = [&]() { return sum_all(mul(softmax_rows(logits), detach(w))); };
    fold(acc, grad_check<double>(loss, {logits}, step, kGradTol, 60, rng), "softmax");
  }
  {  // matmul_nt
    DTensor a = rand_tensor({4, 6}, rng), b = rand_tensor({5, 6}, rng);
    auto loss = [&]() { return mean_all(square(matmul_nt(a, b))); };
    fold(acc, grad_check<double>(loss, {a, b}, step, kGradTol, 60, rng), "matmul_nt");
  }
  {  // add, sub, mul, scale broadcast mix
    DTensor x = rand_tensor({3, 3}, rng), y = rand_tensor({3, 3}, rng);
    DTensor s = rand_tensor({1}, rng);
    auto loss = [&]() { return sum_all(square(add(mul(x, y), scale(sub(x, s), 0.5)))); };
    fold(acc, grad_check<double>(loss, {x, y, s}, step, kGradTol, 50, rng), "arith mix");
  }
  {  // sqrt_elem
    DTensor x = rand_tensor({8}, rng, 0.5, 2.0);
    auto loss = [&]() { return sum_all(sqrt_elem(x)); };
    fold(acc, grad_check<double>(loss, {x}, step, kGradTol, 8, rng), "sqrt");
  }
  {  // lookup_rows with repeats
    DTensor table = rand_tensor({9, 4}, rng);
    std::vector<int> ids = {0, 3, 3, 8};
    auto loss = [&]() { return mean_all(square(lookup_rows(table, ids))); };
    fold(acc, grad_check<double>(loss, {table}, step, kGradTol, 36, rng), "lookup");
  }
  {  // concat_rows, concat_cols
    DTensor p = rand_tensor({2, 3}, rng), q = rand_tensor({1, 3}, rng);
    DTensor u = rand_tensor({3, 2}, rng);
    auto loss = [&]() {
      return mean_all(square(concat_cols<double>({concat_rows<double>({p, q}), u})));
    };
    fold(acc, grad_check<double>(loss, {p, q, u}, step, kGradTol, 15, rng), "concat");
  }
  {  // patchify, unpatchify, avg_pool
    DTensor img = rand_tensor({8, 8}, rng);
    DTensor w = rand_tensor({4, 4}, rng);
    auto loss = [&]() {
      return sum_all(mul(avg_pool(unpatchify(patchify(img, 4), 4, 8, 8), 2), detach(w)));
    };
    fold(acc, grad_check<double>(loss, {img}, step, kGradTol, 40, rng), "patch/pool");
  }
  {  // reshape
    DTensor t = rand_tensor({4, 6}, rng);
    auto loss = [&]() {
      return mean_all(square(reshape(lookup_rows(t, {1, 2}), {3, 4})));
    };
    fold(acc, grad_check<double>(loss, {t}, step, kGradTol, 24, rng), "reshape");
  }
  {  // self- and cross-attention blocks through the conditioning stack
    Rng init(5);
    SelfAttnParamsT<double> sa = SelfAttnParamsT<double>::init(init);
    DTensor x = rand_tensor({6, kModelDim}, rng, -0.5, 0.5);
    auto loss = [&]() { return mean_all(square(self_attention(x, sa))); };
    std::vector<DTensor> params{x, sa.wq, sa.wk, sa.wv, sa.wo, sa.bo};
    fold(acc, grad_check<double>(loss, params, step, kGradTol, 60, rng), "self-attn");
  }

  {  // full path: forward_diffuse -> denoise -> diffusion_loss + ACG head
    Rng mrng(21);
    const int T = 6;
    DenoiserParamsT<double> dp = DenoiserParamsT<double>::init(T, mrng);
    CondProjParamsT<double> cp = CondProjParamsT<double>::init(mrng);
    ACGHeadT<double> head = ACGHeadT<double>::init(T, mrng);
    // The zero output head blocks gradient flow upstream; give it signal.
    for (auto& v : dp.w_out.mutable_values()) v = mrng.normal() * 0.05;

    auto data = generate_dataset(4, 3, "balanced");
    AgeCodebook cb = build_codebook(data);
    auto bundle = bundle_for(data[1], cb);
    DTensor z0 = cast<double>(data[1].image);
    DTensor eps = DTensor::randn(z0.shape(), mrng);
    DiffusionSchedule sched = make_schedule(T, "linear", 1e-2, 0.2);
    const int t = 4;

    std::vector<DTensor> params;
    for (auto& p : dp.params()) params.push_back(p);
    for (auto& p : cp.params()) params.push_back(p);
    for (auto& p : head.params()) params.push_back(p);
    params.push_back(bundle.e_id);
    params.push_back(bundle.e_age);

    auto loss_fn = [&]() {
      auto cond = project_conditions(cp, bundle);
      DTensor z_t = forward_diffuse(z0, t, sched, eps);
      DTensor eps_hat = denoise(dp, z_t, t, cond);
      DTensor l_diff = diffusion_loss(eps_hat, eps);
      DTensor pred = acg_forward(head, z_t, eps_hat, t);
      DTensor l_age = age_guidance_loss(pred, 40.0);
      return total_loss(l_diff, l_age, 0.05);
    };
    Rng probe_rng(77);
    fold(acc, grad_check<double>(loss_fn, params, step, kGradTol, kGradPathProbes,
                                 probe_rng),
         "full path");
  }
  return acc;
}

// --- criterion 2 -----------------------------------------------------------

bool check_marginals(std::string& detail) {
  const DiffusionSchedule sched = make_schedule(200, "linear", 1e-4, 0.05);
  FaceSpec spec;
  spec.u = {0.4, -0.7, 0.2, 0.9, -0.3, 0.6, -0.8, 0.1};
  spec.age = 35;
  spec.noise_key = 5;
  const Tensor x0f = render_face(spec);
  const int n_px = static_cast<int>(x0f.numel());

  bool ok = true;
  double worst_mean = 0.0, worst_var = 0.0;
  Rng rng(909);
  for (int t : {1, 100, 200}) {
    const double abar = sched.alpha_bar_at(t);
    std::vector<double> sum(static_cast<size_t>(n_px), 0.0);
    std::vector<double> sumsq(static_cast<size_t>(n_px), 0.0);
    for (int d = 0; d < kMarginalDraws; ++d) {
      Tensor eps = Tensor::randn(x0f.shape(), rng);
      Tensor z = forward_diffuse(x0f, t, sched, eps);
      const auto& v = z.values();
      for (int k = 0; k < n_px; ++k) {
        sum[static_cast<size_t>(k)] += v[static_cast<size_t>(k)];
        sumsq[static_cast<size_t>(k)] +=
            static_cast<double>(v[static_cast<size_t>(k)]) * v[static_cast<size_t>(k)];
      }
    }
    // Mean agreement: average absolute deviation from sqrt(abar) * x0, in
    // units of the data scale (pixels live in [0, 1]).
    double mean_dev = 0.0, var_pool = 0.0;
    for (int k = 0; k < n_px; ++k) {
      const double m = sum[static_cast<size_t>(k)] / kMarginalDraws;
      const double target = std::sqrt(abar) * x0f.values()[static_cast<size_t>(k)];
      mean_dev += std::fabs(m - target);
      var_pool += sumsq[static_cast<size_t>(k)] / kMarginalDraws - m * m;
    }
    mean_dev /= n_px;
    var_pool /= n_px;
    const double var_rel = std::fabs(var_pool / (1.0 - abar) - 1.0);
    worst_mean = std::max(worst_mean, mean_dev);
    worst_var = std::max(worst_var, var_rel);
    ok = ok && mean_dev <= kMarginalTol && var_rel <= kMarginalTol;
  }
  detail = "worst mean dev " + fmt(worst_mean) + ", worst var rel err " +
           fmt(worst_var) + " (tol " + fmt(kMarginalTol) + ", " +
           std::to_string(kMarginalDraws) + " draws)";
  return ok;
}

// --- criterion 3 -----------------------------------------------------------

bool check_reduction_additivity(std::string& detail) {
  Rng rng(33);
  auto data = generate_dataset(3, 17, "balanced");
  AgeCodebook cb = build_codebook(data);
  auto bundle = bundle_for(data[0], cb);
  CondProjParamsT<double> cp = CondProjParamsT<double>::init(rng);
  auto cond = project_conditions(cp, bundle);

  double worst = 0.0;

  {  // attention block: zero gains equal the text-only configuration
    MultiCAParamsT<double> p = MultiCAParamsT<double>::init(rng);
    DTensor x = rand_tensor({kTokens, kModelDim}, rng, -0.5, 0.5);
    p.set_scales(0.0, 0.0, 0.0);
    DTensor with_zeros = multi_cross_attention(x, p, cond);
    MultiCAParamsT<double> text_only = p;
    text_only.enable_id = text_only.enable_age = text_only.enable_cage = false;
    DTensor text_out = multi_cross_attention(x, text_only, cond);
    for (size_t i = 0; i < with_zeros.values().size(); ++i)
      worst = std::max(worst, std::fabs(with_zeros.values()[i] - text_out.values()[i]));

    // branch sums match the combined pre-projection activation
    p.set_scales(0.7, 1.3, 0.4);
    auto parts = multi_cross_attention_parts(x, p, cond);
    for (size_t i = 0; i < parts.combined.values().size(); ++i) {
      const double ref = parts.text.values()[i] + 0.7 * parts.id.values()[i] +
                         1.3 * parts.age.values()[i] + 0.4 * parts.cage.values()[i];
      worst = std::max(worst, std::fabs(parts.combined.values()[i] - ref));
    }
  }

  {  // whole denoiser: zero gains equal disabled branches
    const int T = 6;
    Rng mrng(8);
    DenoiserParamsT<double> dp = DenoiserParamsT<double>::init(T, mrng);
    for (auto& v : dp.w_out.mutable_values()) v = mrng.normal() * 0.05;
    DTensor z = DTensor::randn({kImageSize, kImageSize}, mrng);

    DenoiserParamsT<double> zeros = dp;
    zeros.set_branch_scales(0.0, 0.0, 0.0);
    DTensor out_zero = denoise(zeros, z, 3, cond);
    DenoiserParamsT<double> off = dp;
    off.set_branch_enables(false, false, false);
    DTensor out_off = denoise(off, z, 3, cond);
    for (size_t i = 0; i < out_zero.values().size(); ++i)
      worst = std::max(worst, std::fabs(out_zero.values()[i] - out_off.values()[i]));
  }

  detail = "max deviation " + fmt(worst, 10) + " (tol " + fmt(kReduceTol, 7) + ")";
  return worst <= kReduceTol;
}

// --- criterion 4 -----------------------------------------------------------

bool check_codebook_purity(std::string& detail) {
  Rng rng(404);
  std::vector<DataRecord> records;
  records.reserve(static_cast<size_t>(kMaxAge) * 4 * kPurityPerAgePerCluster);
  for (int age = kMinAge; age <= kMaxAge; ++age) {
    for (int cluster = 0; cluster < 4; ++cluster) {
      for (int i = 0; i < kPurityPerAgePerCluster; ++i) {
        FaceSpec s;
        for (auto& x : s.u) x = rng.uniform() * 2.0 - 1.0;
        s.u[0] = (cluster & 2 ? 1.0 : -1.0) * (0.05 + 0.9 * rng.uniform());
        s.u[1] = (cluster & 1 ? 1.0 : -1.0) * (0.05 + 0.9 * rng.uniform());
        s.age = age;
        s.noise_key = rng.next_u64();
        DataRecord rec;
        rec.spec = s;
        rec.e_age = extract_age_embedding(s);
        rec.age = age;
        records.push_back(std::move(rec));
      }
    }
  }
  auto reports = codebook_purity(records);
  const size_t expected = static_cast<size_t>(kMaxAge - kMinAge + 1) * 4;
  double min_cos = 1.0;
  int min_count = kPurityPerAgePerCluster;
  for (const auto& r : reports) {
    min_cos = std::min(min_cos, r.cosine);
    min_count = std::min(min_count, r.cluster_count);
  }
  detail = std::to_string(reports.size()) + " cluster/age cells, min count " +
           std::to_string(min_count) + ", min cosine " + fmt(min_cos) + " (floor " +
           fmt(kPurityMin, 2) + ")";
  return reports.size() == expected && min_count >= kPurityPerAgePerCluster &&
         min_cos >= kPurityMin;
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "agediff_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  // 1. gradient suite
  try {
    auto t0 = Clock::now();
    GradStats g = run_gradient_suite();
    const double sec = seconds_since(t0);
    const bool ok = g.pass && g.max_rel_err < kGradTol && g.probes >= 100 &&
                    sec < 5.0 * 60.0;
    report(1, ok,
           "max rel err " + fmt(g.max_rel_err, 8) + " over " + std::to_string(g.probes) +
               " probes (worst: " + g.worst + "), " + fmt(sec, 1) + " s");
  } catch (const std::exception& e) {
    report(1, false, std::string("exception: ") + e.what());
  }

  // 2. forward marginals
  try {
    auto t0 = Clock::now();
    std::string detail;
    const bool ok = check_marginals(detail);
    const double sec = seconds_since(t0);
    report(2, ok && sec < 60.0, detail + ", " + fmt(sec, 1) + " s");
  } catch (const std::exception& e) {
    report(2, false, std::string("exception: ") + e.what());
  }

  // 3. reduction and additivity
  try {
    std::string detail;
    const bool ok = check_reduction_additivity(detail);
    report(3, ok, detail);
  } catch (const std::exception& e) {
    report(3, false, std::string("exception: ") + e.what());
  }

  // 4. codebook purity
  try {
    auto t0 = Clock::now();
    std::string detail;
    const bool ok = check_codebook_purity(detail);
    const double sec = seconds_since(t0);
    report(4, ok && sec < 120.0, detail + ", " + fmt(sec, 1) + " s");
  } catch (const std::exception& e) {
    report(4, false, std::string("exception: ") + e.what());
  }

  // Shared artifacts for criteria 5-9.
  std::vector<DataRecord> data;
  AgeCodebook cb;
  AgeProbe probe;
  IdentityEncoder encoder;
  Model model = Model::init(1, 0);
  TrainConfig ref1, ref2;
  ref1.stage = "I";
  ref1.steps = kRefStage1Steps;
  ref2.stage = "II";
  ref2.steps = kRefStage2Steps;
  bool trained = false;

  // 5. reference training run
  try {
    data = generate_dataset(8500, 42, "uniform");
    cb = build_codebook(data);
    probe = train_age_probe(data);
    encoder = train_identity_encoder(data, EncoderTrainConfig{});

    auto t0 = Clock::now();
    model = Model::init(ref1.T, ref1.seed);
    TrainResult r1 = train_model(model, data, cb, nullptr, ref1, nullptr);
    TrainResult r2 = train_model(model, data, cb, &probe, ref2, nullptr);
    const double min_elapsed = minutes_since(t0);
    trained = true;

    bool finite = true;
    for (const auto& e : r1.log)
      finite = finite && std::isfinite(e.l_diff) && std::isfinite(e.total);
    for (const auto& e : r2.log)
      finite = finite && std::isfinite(e.l_diff) && std::isfinite(e.l_age) &&
               std::isfinite(e.total);

    const std::vector<double> smooth = window_means(r1.log, 250, 2000);
    bool decreasing = smooth.size() == 8;
    for (size_t i = 1; i < smooth.size(); ++i)
      decreasing = decreasing && smooth[i] < smooth[i - 1];

    const bool ok = min_elapsed < kTrainBudgetMin && finite && decreasing;
    std::string curve;
    for (double m : smooth) curve += fmt(m, 3) + " ";
    report(5, ok,
           "stage I+II " + fmt(min_elapsed, 1) + " min (budget " +
               fmt(kTrainBudgetMin, 0) + "), smoothed l_diff " + curve +
               (finite ? "(all finite)" : "(non-finite values!)"));
  } catch (const std::exception& e) {
    report(5, false, std::string("exception: ") + e.what());
  }

  // 6. editing efficacy
  std::vector<FaceSpec> specs;
  EvalReport eval;
  try {
    if (!trained) throw TrainError("no trained model (criterion 5 failed)");
    specs = make_test_specs(100, 1234);
    eval = evaluate_editing(model, cb, encoder, specs, default_targets(), ref2, 55);
    Model untrained = Model::init(ref1.T, 1);
    const double prior = untrained_prior_mae(untrained, cb, default_targets(), ref2, 55,
                                             100);
    const double gate = encoder.calib_mean + kSimSigmas * encoder.calib_std;
    const bool ok = eval.avg_mae <= kMaeMax && eval.avg_mae <= kPriorRatio * prior &&
                    eval.mean_similarity >= gate;
    report(6, ok,
           "MAE " + fmt(eval.avg_mae, 2) + " y (cap " + fmt(kMaeMax, 0) + ", prior " +
               fmt(prior, 2) + "), similarity " + fmt(eval.mean_similarity, 3) +
               " vs 3-sigma gate " + fmt(gate, 3));
  } catch (const std::exception& e) {
    report(6, false, std::string("exception: ") + e.what());
  }

  // 7. ablation directions
  try {
    if (!trained) throw TrainError("no trained model (criterion 5 failed)");
    auto t0 = Clock::now();
    AblationTable table = run_ablations(ref1, ref2, data, cb, probe, encoder, specs,
                                        default_targets(), nullptr, &model);
    const double min_elapsed = minutes_since(t0);
    const EvalReport& full = table.row("full");
    const EvalReport& no_age = table.row("no_age");
    const EvalReport& no_id = table.row("no_id");
    const EvalReport& no_acg = table.row("no_acg");
    const bool dir_age = no_age.avg_mae >= kAblAgeFactor * full.avg_mae;
    const bool dir_id = no_id.mean_similarity <= kAblIdFactor * full.mean_similarity;
    const bool dir_acg = full.avg_mae <= no_acg.avg_mae + kAblAcgSlack;
    const bool ok = dir_age && dir_id && dir_acg && min_elapsed < kAblBudgetMin;
    report(7, ok,
           "MAE full " + fmt(full.avg_mae, 2) + " / no_age " + fmt(no_age.avg_mae, 2) +
               " / no_acg " + fmt(no_acg.avg_mae, 2) + "; sim full " +
               fmt(full.mean_similarity, 3) + " / no_id " +
               fmt(no_id.mean_similarity, 3) + "; " + fmt(min_elapsed, 1) + " min");
  } catch (const std::exception& e) {
    report(7, false, std::string("exception: ") + e.what());
  }

  // 8. attention decoupling
  try {
    if (!trained) throw TrainError("no trained model (criterion 5 failed)");
    AttentionMassReport am = attention_mass(model, cb, make_test_specs(50, 4321), ref2,
                                            66);
    const bool ok = am.age_region_margin > 0.0 && am.age_region_t >= kAttnTMin &&
                    am.face_region_margin > 0.0 && am.face_region_t >= kAttnTMin;
    report(8, ok,
           "age-region margin " + fmt(am.age_region_margin, 5) + " (t " +
               fmt(am.age_region_t, 1) + "), face-region margin " +
               fmt(am.face_region_margin, 5) + " (t " + fmt(am.face_region_t, 1) +
               "), threshold t >= " + fmt(kAttnTMin, 0));
  } catch (const std::exception& e) {
    report(8, false, std::string("exception: ") + e.what());
  }

  // 9. determinism
  try {
    if (!trained) throw TrainError("no trained model (criterion 5 failed)");
    if (specs.empty()) specs = make_test_specs(100, 1234);
    DatasetMeta meta;
    meta.n = 8500;
    meta.seed = 42;
    meta.distribution = "uniform";
    auto again = generate_dataset(8500, 42, "uniform");
    const std::string d1 = save_dataset((scratch / "ds1").string(), data, meta);
    const std::string d2 = save_dataset((scratch / "ds2").string(), again, meta);
    const bool data_ok = d1 == d2;

    TrainConfig tiny;
    tiny.stage = "I";
    tiny.steps = 120;
    tiny.batch_size = 8;
    tiny.T = 16;
    tiny.sampler_steps = 8;
    tiny.log_every = 10;
    std::vector<DataRecord> slice(data.begin(), data.begin() + 600);
    std::ostringstream log_a, log_b;
    Model ma = Model::init(tiny.T, tiny.seed);
    train_model(ma, slice, cb, nullptr, tiny, &log_a);
    Model mb = Model::init(tiny.T, tiny.seed);
    train_model(mb, slice, cb, nullptr, tiny, &log_b);
    const bool log_ok = !log_a.str().empty() && log_a.str() == log_b.str();

    EditScales scales;
    Rng ra = Rng::derive(5, {0xed17});
    Rng rb = Rng::derive(5, {0xed17});
    Tensor ea = edit_age(model, cb, specs[0], 60, scales, ref2, ra);
    Tensor eb = edit_age(model, cb, specs[0], 60, scales, ref2, rb);
    write_pgm((scratch / "edit_a.pgm").string(), ea);
    write_pgm((scratch / "edit_b.pgm").string(), eb);
    const bool edit_ok = read_bytes(scratch / "edit_a.pgm") ==
                             read_bytes(scratch / "edit_b.pgm") &&
                         !read_bytes(scratch / "edit_a.pgm").empty();

    report(9, data_ok && log_ok && edit_ok,
           std::string("dataset digests ") + (data_ok ? "match" : "differ") +
               ", loss logs " + (log_ok ? "match" : "differ") + ", edited bytes " +
               (edit_ok ? "match" : "differ"));
  } catch (const std::exception& e) {
    report(9, false, std::string("exception: ") + e.what());
  }

  fs::remove_all(scratch);
  if (g_failures > 0) {
    std::printf("%d criteria failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
