// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "pcsot/geometry.hpp"
#include "pcsot/tensor.hpp"

namespace pcsot {

// Local neighborhoods around FPS-selected centers, coordinates relative to
// each center.
struct Neighborhoods {
  std::vector<int> center_indices;  // g indices into the region points
  std::vector<Vec3> centers;        // g center coordinates (canonical frame)
  Tensor rel_points;                // (g, k, 3)
};

// Shared per-point MLP 3 -> d/2 -> d with ReLU, max-pooled per group.
struct PatchEmbedParams {
  Tensor w1, b1;  // 3 x d/2, d/2
  Tensor w2, b2;  // d/2 x d, d
};

// Center-coordinate MLP 3 -> d -> d with GeLU, added onto the tokens.
struct PosEmbedParams {
  Tensor w1, b1;  // 3 x d, d
  Tensor w2, b2;  // d x d, d
};

struct TokenBatch {
  Tensor tokens;              // (g, d)
  std::vector<Vec3> centers;  // g
  std::vector<int> center_indices;
  RegionKind kind = RegionKind::kSearch;
};

// Centers by farthest_point_sample(seed 0), neighborhoods by k nearest
// points (ties to the lowest index), coordinates re-expressed relative to
// the center.
Neighborhoods group_points(const RegionSample& region, int g, int k);

Tensor patch_embed(const Neighborhoods& nb, const PatchEmbedParams& p);
Tensor positional_embed(const std::vector<Vec3>& centers, const PosEmbedParams& p);

// group + patch embed + positional embed
TokenBatch embed_region(const RegionSample& region, int g, int k,
                        const PatchEmbedParams& patch, const PosEmbedParams& pos);

}  // namespace pcsot
