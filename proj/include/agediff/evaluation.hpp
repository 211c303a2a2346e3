#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "agediff/acg.hpp"
#include "agediff/editing.hpp"

namespace agediff {

// Frozen 256 -> 64 -> 8 regressor of the identity factors u. The identity
// embedding expands the recovered factors through a fixed polynomial map
// (degree <= 3), spreading 8 numbers over kIdFeatDim decorrelated features.
// Cosine similarities between unrelated identities then concentrate near
// zero instead of scattering with sigma ~ 1/sqrt(8).
inline constexpr int kIdFeatDim = 8 + 28 + 8 + 56;

struct IdentityEncoder {
  Tensor w1;  // {256, 64}
  Tensor b1;  // {1, 64}
  Tensor w2;  // {64, 8}
  Tensor b2;  // {1, 8}
  Tensor feat_mean;  // {1, kIdFeatDim} calibration mean of the embedding
  double calib_mean = 0.0;  // cross-identity similarity distribution
  double calib_std = 0.0;
  double calib_p95 = 0.0;
  double val_mse = 0.0;
  bool frozen = false;

  static IdentityEncoder init(Rng& rng);
  std::vector<Tensor> params() const;
  Tensor hidden(const Tensor& image) const;     // {1, 64}
  Tensor predict_u(const Tensor& image) const;  // {1, 8}
  std::vector<double> embedding(const Tensor& image) const;  // kIdFeatDim
};

struct EncoderTrainConfig {
  int epochs = 8;
  double learning_rate = 2e-3;
  int batch_size = 32;
  double holdout = 0.1;
  uint64_t seed = 3;
  int calib_samples = 600;  // renders for the feature mean
  int calib_pairs = 1000;   // cross-identity cosine pairs
};

// Fits the encoder on rendered faces, freezes it, then calibrates the
// cross-identity similarity distribution. TrainError if the fit fails to
// beat the predict-the-mean baseline.
IdentityEncoder train_identity_encoder(const std::vector<DataRecord>& data,
                                       const EncoderTrainConfig& cfg);

// Cosine similarity of calibration-centered identity embeddings, in [-1, 1].
double identity_similarity(const IdentityEncoder& enc, const Tensor& a,
                           const Tensor& b);

void save_identity_encoder(const std::string& path, const IdentityEncoder& enc);
IdentityEncoder load_identity_encoder(const std::string& path);

// n fresh identities with ages spread evenly over the valid range.
std::vector<FaceSpec> make_test_specs(int n, uint64_t seed);

struct EvalReport {
  std::vector<int> targets;
  std::vector<double> per_target_mae;
  double avg_mae = 0.0;
  double mean_similarity = 0.0;
  std::string manifest_hash;
  std::vector<std::string> grid_files;
};

// Edited images kept around so callers can export grids without resampling.
struct EvalArtifacts {
  std::vector<Tensor> sources;             // one render per spec
  std::vector<std::vector<Tensor>> edits;  // [target][spec]
};

inline const std::vector<int>& default_targets() {
  static const std::vector<int> t{10, 20, 30, 40, 50, 60, 70};
  return t;
}

// Edits every spec to every target, scoring ages with the analytic oracle
// and identity with the frozen encoder. Per-(spec, target) derived rng keeps
// results independent of evaluation order.
EvalReport evaluate_editing(const Model& model, const AgeCodebook& codebook,
                            const IdentityEncoder& encoder,
                            const std::vector<FaceSpec>& specs,
                            const std::vector<int>& targets, const TrainConfig& cfg,
                            uint64_t seed, EvalArtifacts* artifacts = nullptr);

// Age MAE of prior samples drawn from the given (normally untrained) model,
// averaged over the same targets. The floor a trained model must beat.
double untrained_prior_mae(const Model& model, const AgeCodebook& codebook,
                           const std::vector<int>& targets, const TrainConfig& cfg,
                           uint64_t seed, int n_samples = 100);

struct AblationRow {
  std::string name;
  EvalReport report;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  const EvalReport& row(const std::string& name) const;
};

// Trains and evaluates the four conditioning variants: everything on, age
// branches off, identity branch off, and no age guidance in stage two.
// Passing full_model skips retraining the unablated variant and scores that
// model instead; its T must match the configs.
AblationTable run_ablations(const TrainConfig& stage1, const TrainConfig& stage2,
                            const std::vector<DataRecord>& data,
                            const AgeCodebook& codebook, const AgeProbe& probe,
                            const IdentityEncoder& encoder,
                            const std::vector<FaceSpec>& specs,
                            const std::vector<int>& targets,
                            std::ostream* log = nullptr,
                            const Model* full_model = nullptr);

// Column-normalized cross-attention mass, split by branch and image region.
// For each image: each branch's attention map is normalized per condition
// token over the 16 patches, averaged over tokens, blocks, and sampler steps,
// then summed against region coverage.
struct AttentionMassReport {
  std::vector<double> age_on_age_region;  // hair + wrinkle rows, per image
  std::vector<double> id_on_age_region;
  std::vector<double> age_on_face_region;  // face oval, per image
  std::vector<double> id_on_face_region;
  double age_region_margin = 0.0;  // mean(age - id) on hair + wrinkle
  double age_region_t = 0.0;
  double face_region_margin = 0.0;  // mean(id - age) on the face oval
  double face_region_t = 0.0;
  bool decoupled = false;  // both margins positive with t >= 3
};

AttentionMassReport attention_mass(const Model& model, const AgeCodebook& codebook,
                                   const std::vector<FaceSpec>& specs,
                                   const TrainConfig& cfg, uint64_t seed);

// Metrics file round trip. Writing then reading reproduces every value.
void export_report(const EvalReport& report, const std::string& path);
EvalReport read_report(const std::string& path);

// Table-shaped text rendering of one or more evaluation rows.
std::string format_report_table(const std::vector<AblationRow>& rows);

}  // namespace agediff
