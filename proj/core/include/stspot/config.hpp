#ifndef STSPOT_CONFIG_HPP_
#define STSPOT_CONFIG_HPP_

#include <string>

#include <nlohmann/json.hpp>

#include "stspot/datagen.hpp"
#include "stspot/model.hpp"
#include "stspot/trainer.hpp"

namespace stspot::config {

struct RunConfig {
  std::string profile = "desk";
  datagen::GenConfig gen;
  int dataset_size = 32;
  std::string dataset_format = "polygon";
  model::ModelConfig model;
  train::TrainConfig train;
  model::InferParams infer;
};

/// "desk": small, runnable end to end on one machine.
/// "paper": the documented full-scale settings (450K iterations, lr 2.5e-5
/// decayed at 350K/420K, 6 encoder layers with 8 heads at width 256); kept
/// for fidelity, not meant to run to completion here.
RunConfig profile_config(const std::string& name);

nlohmann::json to_json(const RunConfig& cfg);
/// Overlay `path` (JSON, same keys as to_json) onto `base`.
RunConfig load_config(const std::string& path, const RunConfig& base);
RunConfig from_json(const nlohmann::json& j, const RunConfig& base);

}  // namespace stspot::config

#endif  // STSPOT_CONFIG_HPP_
