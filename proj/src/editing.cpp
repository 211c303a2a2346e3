#include "agediff/editing.hpp"

#include "agediff/diffusion.hpp"

namespace agediff {

ConditionBundle edit_bundle(const AgeCodebook& codebook, const Tensor& e_id,
                            int target_age) {
  if (!codebook.has(target_age))
    throw ValueError("edit: no codebook entry for age " + std::to_string(target_age));
  ConditionBundle b;
  b.caption = encode_caption({"face"});
  b.age_phrase = age_phrase_tokens(target_age);
  b.e_id = e_id;
  b.e_age = Tensor::from_values({1, kEmbedDim}, codebook.entry(target_age));
  b.age = target_age;
  return b;
}

Tensor edit_age(const Model& model, const AgeCodebook& codebook, const Tensor& e_id,
                int target_age, const EditScales& scales, const TrainConfig& cfg,
                Rng& rng, AttnCapture* capture) {
  cfg.validate();
  if (model.T != cfg.T)
    throw ValueError("edit: model trained with T=" + std::to_string(model.T) +
                     " but config says T=" + std::to_string(cfg.T));
  ConditionBundle bundle = edit_bundle(codebook, e_id, target_age);
  ProjectedConditions cond = project_conditions(model.cond, bundle);

  // Weights stay shared with the model; gains and toggles live on this copy.
  DenoiserParams dn = model.denoiser;
  dn.set_branch_enables(cfg.enable_id_branch, cfg.enable_age_branch,
                        cfg.enable_cage_branch);
  dn.set_branch_scales(scales.id, scales.age, scales.cage);

  const DiffusionSchedule sched = make_schedule(cfg.T, "linear", cfg.beta_min, cfg.beta_max);
  DenoiseFn<float> fn = [&dn, &cond, capture](const Tensor& z, int t) {
    return denoise(dn, z, t, cond, capture);
  };

  Tensor z = Tensor::randn({kImageSize, kImageSize}, rng);
  if (cfg.sampler == "ddim") return ddim_sample(z, fn, sched, cfg.sampler_steps);
  for (int t = cfg.T; t >= 1; --t) z = ddpm_step(z, fn(z, t), t, sched, rng);
  return z;
}

Tensor edit_age(const Model& model, const AgeCodebook& codebook,
                const FaceSpec& source, int target_age, const EditScales& scales,
                const TrainConfig& cfg, Rng& rng) {
  return edit_age(model, codebook, extract_id_embedding(source), target_age, scales,
                  cfg, rng, nullptr);
}

}  // namespace agediff
