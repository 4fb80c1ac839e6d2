// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "pcsot/model.hpp"
#include "pcsot/train.hpp"

namespace pcsot {

// Everything a run needs: architecture plus training switches. JSON keys
// mirror the field names; unknown keys are rejected. `preset` (desk |
// large | micro) seeds the defaults before the overrides apply, and the
// adapter/moge placements accept either explicit 1-based arrays or the
// strings "all" / "even" / "last" interpreted under `layer_index_base`.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig run_config_from_json_text(const std::string& text);
RunConfig run_config_from_file(const std::string& path);
std::string run_config_to_json_text(const RunConfig& cfg);

}  // namespace pcsot
