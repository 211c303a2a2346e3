#pragma once

#include <iosfwd>
#include <vector>

#include "agediff/acg.hpp"
#include "agediff/config.hpp"
#include "agediff/conditioning.hpp"
#include "agediff/denoiser.hpp"
#include "agediff/schedule.hpp"
#include "agediff/synthface.hpp"

namespace agediff {

// Everything that learns: the noise predictor, the condition projections and
// the guidance head. The age probe stays outside; it is frozen input.
struct Model {
  DenoiserParams denoiser;
  CondProjParams cond;
  ACGHead head;
  int T = 0;

  static Model init(int T, uint64_t seed);
  std::vector<Tensor> trainable(bool include_head) const;
  NamedTensors<float> named() const;
  int64_t param_count() const;
};

struct TrainLogEntry {
  int step = 0;
  double l_diff = 0.0;
  double l_age = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  int steps_run = 0;
};

// One optimization run over the given stage. Stage I ignores the guidance
// head; stage II adds the age-guidance term after a warmup slice during
// which the head trains against a detached noise prediction.
TrainResult train_model(Model& model, const std::vector<DataRecord>& data,
                        const AgeCodebook& codebook, const AgeProbe* probe,
                        const TrainConfig& cfg, std::ostream* log_stream = nullptr);

// Mean of l_diff over consecutive windows, covering at most `limit` entries.
std::vector<double> window_means(const std::vector<TrainLogEntry>& log, int window,
                                 int limit);

std::string format_log_entry(const TrainLogEntry& e);

// Checkpoint round trip. Only learnables are stored; fixed tables are rebuilt
// from the recorded T.
void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);

}  // namespace agediff
