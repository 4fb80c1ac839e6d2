// SPDX-License-Identifier: Apache-2.0
#include "pcsot/temporal.hpp"

namespace pcsot {

Tensor propagate_temporal_token(const TemporalToken& tok) {
  if (tok.carried.empty()) return tok.initial;
  return add(tok.initial, tok.carried);
}

Tensor apply_dynamic_mask(const Tensor& tokens, const Tensor& mask,
                          const Tensor& beta) {
  if (mask.shape() != beta.shape() || mask.rank() != 2 || mask.dim(1) != 1 ||
      mask.dim(0) != tokens.dim(0))
    throw DimensionError("apply_dynamic_mask: mask/beta must be G x 1 matching tokens");
  return add(tokens, mul(mask, beta));
}

}  // namespace pcsot
