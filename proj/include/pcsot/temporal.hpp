// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pcsot/tensor.hpp"

namespace pcsot {

// Learnable initial temporal token plus the value carried over from the
// previous frame's encoder output. `carried` is empty exactly at t = 1.
// During training the carried value stays on the clip's tape; at inference
// it is a detached value.
struct TemporalToken {
  Tensor initial;  // 1 x d, tunable
  Tensor carried;  // 1 x d or empty
};

// Learnable per-token mask scales, initialized to 1.
struct MaskWeights {
  Tensor beta_template;  // G_t x 1
  Tensor beta_search;    // G_s x 1
};

// carried present: initial + carried; absent: initial as-is (same object).
Tensor propagate_temporal_token(const TemporalToken& tok);

// tokens + (mask . beta), the per-token scalar broadcasting across d.
Tensor apply_dynamic_mask(const Tensor& tokens, const Tensor& mask,
                          const Tensor& beta);

}  // namespace pcsot
