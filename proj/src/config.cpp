#include "agediff/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "agediff/digest.hpp"
#include "agediff/error.hpp"

namespace agediff {

namespace {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  static const std::set<std::string> known = {
      "stage", "lambda", "learning_rate", "batch_size", "steps", "seed",
      "enable_age_branch", "enable_id_branch", "enable_cage_branch", "enable_acg",
      "sampler", "sampler_steps", "T", "beta_min", "beta_max",
      "acg_target", "acg_input", "acg_warmup_frac",
      "init_checkpoint", "joint_from_scratch", "log_every"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown key '" + it.key() + "'");

  TrainConfig c;
  read_field(j, "stage", c.stage);
  read_field(j, "lambda", c.lambda);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "steps", c.steps);
  read_field(j, "seed", c.seed);
  read_field(j, "enable_age_branch", c.enable_age_branch);
  read_field(j, "enable_id_branch", c.enable_id_branch);
  read_field(j, "enable_cage_branch", c.enable_cage_branch);
  read_field(j, "enable_acg", c.enable_acg);
  read_field(j, "sampler", c.sampler);
  read_field(j, "sampler_steps", c.sampler_steps);
  read_field(j, "T", c.T);
  read_field(j, "beta_min", c.beta_min);
  read_field(j, "beta_max", c.beta_max);
  read_field(j, "acg_target", c.acg_target);
  read_field(j, "acg_input", c.acg_input);
  read_field(j, "acg_warmup_frac", c.acg_warmup_frac);
  read_field(j, "init_checkpoint", c.init_checkpoint);
  read_field(j, "joint_from_scratch", c.joint_from_scratch);
  read_field(j, "log_every", c.log_every);
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    TrainConfig c;
    c.validate();
    return c;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("parse " + path + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["stage"] = stage;
  j["lambda"] = lambda;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["steps"] = steps;
  j["seed"] = seed;
  j["enable_age_branch"] = enable_age_branch;
  j["enable_id_branch"] = enable_id_branch;
  j["enable_cage_branch"] = enable_cage_branch;
  j["enable_acg"] = enable_acg;
  j["sampler"] = sampler;
  j["sampler_steps"] = sampler_steps;
  j["T"] = T;
  j["beta_min"] = beta_min;
  j["beta_max"] = beta_max;
  j["acg_target"] = acg_target;
  j["acg_input"] = acg_input;
  j["acg_warmup_frac"] = acg_warmup_frac;
  j["init_checkpoint"] = init_checkpoint;
  j["joint_from_scratch"] = joint_from_scratch;
  j["log_every"] = log_every;
  return j;
}

std::string TrainConfig::digest() const { return to_hex(fnv1a64(to_json().dump())); }

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("field '" + field + "': " + why);
  };
  if (stage != "I" && stage != "II") fail("stage", "must be \"I\" or \"II\"");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda", "must be >= 0");
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be > 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (steps < 1) fail("steps", "must be >= 1");
  if (sampler != "ddim" && sampler != "ddpm") fail("sampler", "must be ddim or ddpm");
  if (T < 1) fail("T", "must be >= 1");
  if (sampler_steps < 1 || sampler_steps > T) fail("sampler_steps", "must be in [1, T]");
  if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max)
    fail("beta_min/beta_max", "need 0 < beta_min <= beta_max < 1");
  if (acg_target != "probe" && acg_target != "ground_truth")
    fail("acg_target", "must be probe or ground_truth");
  if (acg_input != "predicted" && acg_input != "true")
    fail("acg_input", "must be predicted or true");
  if (acg_warmup_frac < 0.0 || acg_warmup_frac >= 1.0)
    fail("acg_warmup_frac", "must be in [0, 1)");
  if (log_every < 1) fail("log_every", "must be >= 1");
}

}  // namespace agediff
