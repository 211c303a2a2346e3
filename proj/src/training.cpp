#include "agediff/training.hpp"

#include <cstdio>
#include <map>
#include <ostream>

#include "agediff/diffusion.hpp"
#include "agediff/io.hpp"
#include "agediff/optimizer.hpp"
#include "agediff/tape.hpp"

namespace agediff {

namespace {
constexpr uint64_t kStreamModelInit = 0xd0;
constexpr uint64_t kStreamTrain = 0x7a;
}  // namespace

Model Model::init(int T, uint64_t seed) {
  Model m;
  m.T = T;
  Rng rng = Rng::derive(seed, {kStreamModelInit});
  m.denoiser = DenoiserParams::init(T, rng);
  m.cond = CondProjParams::init(rng);
  m.head = ACGHead::init(T, rng);
  return m;
}

std::vector<Tensor> Model::trainable(bool include_head) const {
  std::vector<Tensor> out = denoiser.params();
  for (auto& p : cond.params()) out.push_back(p);
  if (include_head)
    for (auto& p : head.params()) out.push_back(p);
  return out;
}

NamedTensors<float> Model::named() const {
  NamedTensors<float> out;
  for (auto& kv : denoiser.named()) out.push_back({"denoiser." + kv.first, kv.second});
  out.push_back({"cond.embed", cond.embed});
  out.push_back({"cond.w_id", cond.w_id});
  out.push_back({"cond.b_id", cond.b_id});
  out.push_back({"cond.w_age", cond.w_age});
  out.push_back({"cond.b_age", cond.b_age});
  out.push_back({"head.w1", head.w1});
  out.push_back({"head.b1", head.b1});
  out.push_back({"head.w2", head.w2});
  out.push_back({"head.b2", head.b2});
  return out;
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const auto& p : trainable(true)) n += p.numel();
  return n;
}

std::string format_log_entry(const TrainLogEntry& e) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f", e.step, e.l_diff, e.l_age, e.total);
  return buf;
}

TrainResult train_model(Model& model, const std::vector<DataRecord>& data,
                        const AgeCodebook& codebook, const AgeProbe* probe,
                        const TrainConfig& cfg, std::ostream* log_stream) {
  cfg.validate();
  if (data.empty()) throw TrainError("no training data");
  if (model.T != cfg.T) throw TrainError("model T does not match config T");
  const bool stage2 = cfg.stage == "II";
  const bool use_acg = stage2 && cfg.enable_acg && cfg.lambda > 0.0;
  if (use_acg && cfg.acg_target == "probe" && probe == nullptr)
    throw TrainError("guidance needs a trained age probe");
  if (use_acg && probe != nullptr && !probe->frozen)
    throw TrainError("age probe must be frozen before guidance training");

  const DiffusionSchedule sched = make_schedule(cfg.T, "linear", cfg.beta_min, cfg.beta_max);
  model.denoiser.set_branch_enables(cfg.enable_id_branch, cfg.enable_age_branch,
                                    cfg.enable_cage_branch);

  // Codebook rows as constant tensors, one per age present in the data.
  std::map<int, Tensor> code_rows;
  for (const auto& rec : data)
    if (!code_rows.count(rec.age)) {
      const int key = codebook.has(rec.age) ? rec.age : codebook.nearest(rec.age);
      code_rows[rec.age] = Tensor::from_values({1, kEmbedDim}, codebook.entry(key));
    }

  for (auto& p : model.trainable(true)) p.set_requires_grad(false);
  std::vector<Tensor> opt_params = model.trainable(use_acg);
  for (auto& p : opt_params) p.set_requires_grad(true);
  Adam opt(opt_params, cfg.learning_rate);

  Rng rng = Rng::derive(cfg.seed, {kStreamTrain});
  const int warmup_steps = static_cast<int>(cfg.acg_warmup_frac * cfg.steps);

  TrainResult result;
  result.log.reserve(static_cast<size_t>(cfg.steps));
  Tape tape;
  for (int step = 1; step <= cfg.steps; ++step) {
    const bool head_only_acg = use_acg && step <= warmup_steps;
    try {
      Tape::Scope scope(tape);
      Tensor l_diff_sum, l_age_sum;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const DataRecord& rec =
            data[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(data.size()) - 1))];
        const int t = rng.uniform_int(1, cfg.T);
        Tensor eps = Tensor::randn({kImageSize, kImageSize}, rng);
        Tensor z_t = forward_diffuse(rec.image, t, sched, eps);

        ConditionBundle bundle;
        bundle.caption = rec.caption;
        bundle.age_phrase = rec.age_phrase;
        bundle.e_id = rec.e_id;
        bundle.e_age = code_rows.at(rec.age);
        bundle.age = rec.age;
        ProjectedConditions cond = project_conditions(model.cond, bundle);

        Tensor eps_hat = denoise(model.denoiser, z_t, t, cond);
        Tensor l_diff = diffusion_loss(eps_hat, eps);
        l_diff_sum = l_diff_sum.defined() ? add(l_diff_sum, l_diff) : l_diff;

        if (use_acg) {
          Tensor eps_in = cfg.acg_input == "true" ? eps
                          : head_only_acg         ? detach(eps_hat)
                                                  : eps_hat;
          const double target = cfg.acg_target == "probe" ? probe->predict(rec.image)
                                                          : static_cast<double>(rec.age);
          Tensor pred = acg_forward(model.head, z_t, eps_in, t);
          Tensor l_age = age_guidance_loss(pred, target);
          l_age_sum = l_age_sum.defined() ? add(l_age_sum, l_age) : l_age;
        }
      }
      const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
      Tensor l_diff_mean = scale(l_diff_sum, inv_b);
      TrainLogEntry entry;
      entry.step = step;
      entry.l_diff = l_diff_mean.item();
      Tensor total = l_diff_mean;
      if (use_acg) {
        Tensor l_age_mean = scale(l_age_sum, inv_b);
        entry.l_age = l_age_mean.item();
        total = total_loss(l_diff_mean, l_age_mean, cfg.lambda);
      }
      entry.total = total.item();
      tape.backward(total);
      opt.step();
      opt.zero_grad();
      tape.reset();

      result.log.push_back(entry);
      if (log_stream && (step % cfg.log_every == 0 || step == cfg.steps))
        (*log_stream) << format_log_entry(entry) << "\n";
    } catch (const NonFiniteError& e) {
      throw TrainError("aborted at step " + std::to_string(step) + ": " + e.what());
    }
  }
  result.steps_run = cfg.steps;
  for (auto& p : opt_params) p.set_requires_grad(false);
  return result;
}

std::vector<double> window_means(const std::vector<TrainLogEntry>& log, int window,
                                 int limit) {
  if (window < 1) throw ValueError("window must be positive");
  const int n = std::min<int>(static_cast<int>(log.size()), limit);
  std::vector<double> out;
  for (int start = 0; start + window <= n; start += window) {
    double s = 0.0;
    for (int i = start; i < start + window; ++i) s += log[static_cast<size_t>(i)].l_diff;
    out.push_back(s / window);
  }
  return out;
}

void save_model(const std::string& path, const Model& model) {
  Checkpoint ck;
  ck.meta["kind"] = "model";
  ck.meta["T"] = model.T;
  ck.meta["params"] = model.param_count();
  for (const auto& [name, t] : model.named()) ck.tensors.push_back({name, t});
  save_checkpoint(path, ck);
}

Model load_model(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.meta.value("kind", "") != "model")
    throw IoError(path + ": not a model checkpoint");
  Model m = Model::init(ck.meta.at("T").get<int>(), 0);
  load_into(ck, m.named());
  return m;
}

}  // namespace agediff
