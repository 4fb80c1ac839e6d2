// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "pcsot/config.hpp"
#include "pcsot/model.hpp"

namespace pcsot {

// File layout: one line of compact JSON (format version, the full run
// config, and a parameter table with name / shape / frozen flag / byte
// offset), a newline, then a single blob of little-endian 32-bit floats
// in manifest order.
void save_checkpoint(const Model& model, const RunConfig& cfg,
                     const std::filesystem::path& path);

// Rebuilds the model from the embedded config, then overwrites every
// parameter from the blob. Mismatches name the first offending parameter.
struct LoadedCheckpoint {
  RunConfig config;
  Model model;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Loads values into an existing model; manifest must match the model's
// parameter table exactly.
void load_checkpoint_into(Model& model, const std::filesystem::path& path);

}  // namespace pcsot
