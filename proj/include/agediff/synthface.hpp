#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "agediff/tensor.hpp"
#include "agediff/vocab.hpp"

namespace agediff {

inline constexpr int kImageSize = 16;

// Pinned constants of the procedural face renderer and embedding extractors.
struct RenderConstants {
  double hair_base = -0.2;
  double hair_gain = 0.8;
  double wrinkle_gain = 0.5;
  double tone_base = 0.25;
  double tone_gain = 0.25;
  double pattern_gain = 0.12;
  double bg_level = -0.85;
  double bg_noise = 0.05;
  double age_noise = 0.05;  // stddev of the age-embedding perturbation
  double leak_norm = 0.2;   // operator norm of the identity leakage map
  static const RenderConstants& defaults();
};

// Generative description of one face. u holds eight identity factors in
// [-1, 1]; noise_key selects the per-record noise streams.
struct FaceSpec {
  std::array<double, 8> u{};
  int age = 0;
  uint64_t noise_key = 0;

  std::vector<std::string> caption_words() const;
};

// Deterministic 16x16 render in [-1, 1]:
//   rows 0-2   hair shade, brightens linearly with age
//   rows 3-6   forehead, alternating-column wrinkle stripes scale with age
//   rows 7-15  elliptical face patch over a noisy flat background
Tensor render_face(const FaceSpec& spec, const RenderConstants& rc = RenderConstants::defaults());

struct AgeEstimate {
  double age = 0.0;
  double confidence = 0.0;
  double hair_estimate = 0.0;
  double wrinkle_estimate = 0.0;
};

// Inverts the render laws analytically. Exact on clean renders.
AgeEstimate oracle_age(const Tensor& image, const RenderConstants& rc = RenderConstants::defaults());

struct RegionMasks {
  std::vector<uint8_t> hair, wrinkle, face;  // kImageSize^2 each, 0/1
};
RegionMasks region_masks(const FaceSpec& spec);

// Unit-norm identity embedding; a fixed nonlinear function of u only.
Tensor extract_id_embedding(const FaceSpec& spec);

// Age embedding: smooth age signature plus a bounded identity leakage term
// plus per-record noise.
Tensor extract_age_embedding(const FaceSpec& spec,
                             const RenderConstants& rc = RenderConstants::defaults());

// The noise-free age signature (sum-of-bumps code), for analysis.
std::vector<double> age_signature(int age);

// Quadrant of (u0, u1): 0..3.
int identity_cluster(const FaceSpec& spec);

struct DataRecord {
  FaceSpec spec;
  Tensor image;    // {16, 16}
  Tensor e_id;     // {1, 16}
  Tensor e_age;    // {1, 16}
  std::vector<int> caption;
  std::vector<int> age_phrase;
  int age = 0;
};

// age_dist: "uniform" draws ages independently; "balanced" cycles 1..85.
std::vector<DataRecord> generate_dataset(int n, uint64_t seed, const std::string& age_dist,
                                         const RenderConstants& rc = RenderConstants::defaults());

// Per-age mean embedding with sample counts.
class AgeCodebook {
 public:
  void accumulate(int age, const std::vector<float>& e);
  void finalize();
  bool finalized() const { return finalized_; }
  bool has(int age) const;
  const std::vector<float>& entry(int age) const;
  // Closest recorded age (ties resolve downward). For thin datasets.
  int nearest(int age) const;
  int count(int age) const;
  std::vector<int> ages() const;
  const std::string& attribute() const { return attribute_; }

  void save(const std::string& path) const;
  static AgeCodebook load(const std::string& path);

 private:
  struct Cell {
    std::vector<double> sum;
    std::vector<float> mean;
    int n = 0;
  };
  std::map<int, Cell> cells_;
  std::string attribute_ = "age";
  bool finalized_ = false;
};

AgeCodebook build_codebook(const std::vector<DataRecord>& records);

struct PurityReport {
  int age = 0;
  int cluster = 0;
  int cluster_count = 0;
  double cosine = 0.0;
};

// Cosine between each identity-cluster codebook entry and the overall entry.
std::vector<PurityReport> codebook_purity(const std::vector<DataRecord>& records);

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b);

}  // namespace agediff
