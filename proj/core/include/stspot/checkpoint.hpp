#ifndef STSPOT_CHECKPOINT_HPP_
#define STSPOT_CHECKPOINT_HPP_

#include <string>

#include <nlohmann/json.hpp>

#include "stspot/nn.hpp"
#include "stspot/trainer.hpp"

namespace stspot::train {

/// Directory layout: manifest.json plus one little-endian float64 .bin per
/// named parameter (and per optimizer moment when present). The manifest
/// records shapes and FNV-1a checksums.
void save_checkpoint(const std::string& dir, const nn::ParamStore& params,
                     long long iteration, const OptState* opt,
                     const nlohmann::json& config_snapshot);

struct LoadedCheckpoint {
  long long iteration = 0;
  nlohmann::json config_snapshot;
};

/// Loads into an existing parameter set; shape or checksum mismatches and
/// missing entries raise errors naming the parameter.
LoadedCheckpoint load_checkpoint(const std::string& dir, nn::ParamStore& params,
                                 OptState* opt = nullptr);

}  // namespace stspot::train

#endif  // STSPOT_CHECKPOINT_HPP_
