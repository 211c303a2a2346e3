#include "agediff/acg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "agediff/io.hpp"
#include "agediff/optimizer.hpp"
#include "agediff/tape.hpp"

namespace agediff {

AgeProbe train_age_probe(const std::vector<DataRecord>& records,
                         const ProbeTrainConfig& cfg) {
  if (records.size() < 20) throw ValueError("age probe: need at least 20 records");
  if (cfg.holdout_frac <= 0.0 || cfg.holdout_frac >= 0.5)
    throw ValueError("age probe: holdout fraction must be in (0, 0.5)");
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    throw ValueError("age probe: bad epochs/batch");

  Rng rng = Rng::derive(cfg.seed, {0x9e0be});
  std::vector<int> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(0, i)]);

  const int n_val = std::max(1, static_cast<int>(records.size() * cfg.holdout_frac));
  const int n_train = static_cast<int>(records.size()) - n_val;
  std::vector<int> train(order.begin(), order.begin() + n_train);
  std::vector<int> val(order.begin() + n_train, order.end());

  AgeProbe probe = AgeProbe::init(rng);
  for (auto& p : probe.params()) p.set_requires_grad(true);
  Adam opt(probe.params(), cfg.learning_rate);
  Tape tape;

  const float inv_span = 1.0f / static_cast<float>(kMaxAge);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = static_cast<int>(train.size()) - 1; i > 0; --i)
      std::swap(train[i], train[rng.uniform_int(0, i)]);
    for (size_t start = 0; start < train.size(); start += cfg.batch_size) {
      const size_t stop = std::min(train.size(), start + cfg.batch_size);
      Tape::Scope scope(tape);
      Tensor loss;
      for (size_t k = start; k < stop; ++k) {
        const DataRecord& rec = records[static_cast<size_t>(train[k])];
        Tensor resid = scale(sub(probe.forward(rec.image),
                                 Tensor::full({1, 1}, static_cast<float>(rec.age))),
                             inv_span);
        Tensor sq = mean_all(square(resid));
        loss = loss.defined() ? add(loss, sq) : sq;
      }
      loss = scale(loss, 1.0 / static_cast<double>(stop - start));
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
      tape.reset();
    }
  }

  double train_age_sum = 0.0;
  for (int i : train) train_age_sum += records[static_cast<size_t>(i)].age;
  const double mean_age = train_age_sum / n_train;

  double mae = 0.0, baseline = 0.0;
  for (int i : val) {
    const DataRecord& rec = records[static_cast<size_t>(i)];
    mae += std::fabs(probe.predict(rec.image) - rec.age);
    baseline += std::fabs(mean_age - rec.age);
  }
  mae /= n_val;
  baseline /= n_val;
  if (mae >= baseline)
    throw TrainError("age probe: validation MAE " + std::to_string(mae) +
                     " does not beat mean-age baseline " + std::to_string(baseline));

  probe.val_mae = mae;
  probe.frozen = true;
  for (auto& p : probe.params()) p.set_requires_grad(false);
  return probe;
}

void save_age_probe(const std::string& path, const AgeProbe& probe) {
  Checkpoint ck;
  ck.meta["kind"] = "age_probe";
  ck.meta["val_mae"] = probe.val_mae;
  ck.meta["frozen"] = probe.frozen;
  ck.tensors = {{"w1", probe.w1}, {"b1", probe.b1}, {"w2", probe.w2}, {"b2", probe.b2}};
  save_checkpoint(path, ck);
}

AgeProbe load_age_probe(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.meta.value("kind", "") != "age_probe")
    throw IoError(path + ": not an age probe checkpoint");
  Rng rng(0);
  AgeProbe probe = AgeProbe::init(rng);
  load_into(ck, {{"w1", probe.w1}, {"b1", probe.b1}, {"w2", probe.w2}, {"b2", probe.b2}});
  probe.val_mae = ck.meta.at("val_mae").get<double>();
  probe.frozen = ck.meta.at("frozen").get<bool>();
  return probe;
}

}  // namespace agediff
