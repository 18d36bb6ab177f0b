#ifndef STSPOT_TRAINER_HPP_
#define STSPOT_TRAINER_HPP_

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stspot/model.hpp"

namespace stspot::train {

struct AugConfig {
  double color_jitter = 0.0;    // multiplicative/additive amplitude
  double hflip_prob = 0.0;
  double max_rotate_deg = 0.0;  // nearest-resample rotation
};

struct TrainConfig {
  long long iterations = 5000;
  double base_lr = 1e-3;
  std::vector<long long> milestones = {3500, 4500};
  double decay = 0.1;
  int batch_size = 2;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 5.0;  // global norm; 0 disables
  heads::LossWeights weights;
  std::uint64_t seed = 0;
  bool gradient_block = false;
  bool strict_t_recognition = false;
  double gt_jitter = 0.1;
  long long checkpoint_every = 1000;
  AugConfig aug;
  /// Serialized run configuration embedded in checkpoints so that infer and
  /// visualize can rebuild the same model.
  std::string config_snapshot_json;

  void validate() const;
};

/// Piecewise-constant: base rate, multiplied by `decay` at each milestone.
double lr_schedule(long long iteration, const TrainConfig& cfg);

struct OptState {
  struct Entry {
    std::vector<double> m, v;
  };
  std::map<std::string, Entry> entries;
  long long step = 0;
};

/// One decoupled-weight-decay adaptive-moment update over every parameter.
void adamw_step(nn::ParamStore& params, OptState& state, double lr,
                const TrainConfig& cfg);

/// Deterministic color jitter / horizontal flip / small rotation; instances
/// whose polygons leave the image are dropped.
datagen::SceneSample augment_sample(const datagen::SceneSample& s,
                                    const AugConfig& aug, Rng& rng);

using StepProbe =
    std::function<void(long long iter, const model::SpotterModel::StepLosses&)>;

struct TrainResult {
  long long iterations_run = 0;
  std::string last_checkpoint;
  std::string metrics_path;
  bool aborted = false;
};

/// Runs the optimization loop, writing one structured record per step to
/// metrics.jsonl under out_dir and periodic checkpoints. Non-finite losses
/// abort with the last good checkpoint retained.
TrainResult train(model::SpotterModel& model, const TrainConfig& cfg,
                  const std::vector<datagen::SceneSample>& dataset,
                  const std::string& out_dir, const StepProbe& probe = {});

}  // namespace stspot::train

#endif  // STSPOT_TRAINER_HPP_
