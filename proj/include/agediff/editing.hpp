#pragma once

#include "agediff/training.hpp"

namespace agediff {

// Attention gains applied at edit time on top of the trained weights.
// 1.0 everywhere reproduces training behavior; raising `age` strengthens
// how hard the age conditioning pulls on the output.
struct EditScales {
  double id = 1.0;
  double age = 1.0;
  double cage = 1.0;
};

// Conditioning for a regeneration from pure noise. The source contributes
// only its identity embedding; the target age supplies the phrase tokens and
// the codebook entry; the caption is a fixed neutral one.
ConditionBundle edit_bundle(const AgeCodebook& codebook, const Tensor& e_id,
                            int target_age);

// Regenerates a face with the source identity at the target age. The sampler,
// step count, schedule, and branch toggles come from cfg. Deterministic given
// the rng state. Throws ValueError if the target age has no codebook entry.
Tensor edit_age(const Model& model, const AgeCodebook& codebook, const Tensor& e_id,
                int target_age, const EditScales& scales, const TrainConfig& cfg,
                Rng& rng, AttnCapture* capture = nullptr);

Tensor edit_age(const Model& model, const AgeCodebook& codebook,
                const FaceSpec& source, int target_age, const EditScales& scales,
                const TrainConfig& cfg, Rng& rng);

}  // namespace agediff
