#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace agediff {

// Flat training/editing configuration. Unknown JSON keys are rejected so a
// typo cannot silently fall back to a default.
struct TrainConfig {
  std::string stage = "I";
  double lambda = 0.1;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int steps = 2000;
  uint64_t seed = 7;
  bool enable_age_branch = true;
  bool enable_id_branch = true;
  bool enable_cage_branch = true;
  bool enable_acg = true;
  std::string sampler = "ddim";
  int sampler_steps = 50;
  int T = 200;
  double beta_min = 1e-4;
  double beta_max = 0.05;
  std::string acg_target = "probe";     // or "ground_truth"
  std::string acg_input = "predicted";  // or "true"
  double acg_warmup_frac = 0.2;
  std::string init_checkpoint;
  bool joint_from_scratch = false;
  int log_every = 50;

  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json_file(const std::string& path);
  nlohmann::json to_json() const;
  std::string digest() const;
  void validate() const;
};

}  // namespace agediff
