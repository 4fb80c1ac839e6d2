// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "pcsot/tensor.hpp"

namespace pcsot {

struct LayerNormParams {
  Tensor gain, bias;  // d
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // all d x d / d
};

struct FfnParams {
  Tensor w1, b1;  // d x hidden
  Tensor w2, b2;  // hidden x d
};

// One frozen backbone layer: pre-LN attention and FFN sublayers.
struct TransformerLayerParams {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  FfnParams ffn;
};

// Two-path adapter: gated bottleneck, bias-free.
//   out = ReLU(F W_s) . GeLU(F W_dn) W_up
struct AdapterParams {
  Tensor w_dn;  // d x r
  Tensor w_up;  // r x d
  Tensor w_s;   // d x 1
};

struct AdapterPair {
  AdapterParams attn_side;  // parallel to the attention sublayer
  AdapterParams ffn_side;   // parallel to the FFN sublayer
};

// Expert FFN, bottleneck ceil(d/8), GeLU.
struct ExpertParams {
  Tensor w1, b1, w2, b2;
};

struct MoGEParams {
  Tensor router;                      // d x M
  std::vector<ExpertParams> experts;  // M
  int top_k = 1;
};

// Token layout of the encoder input: [temporal | template | search].
struct TokenSplit {
  int n_template = 0;
  int n_search = 0;
  int total() const { return 1 + n_template + n_search; }
};

// Per-token routing decision: the K selected experts (ties to the lowest
// expert index) and their softmaxed gates.
struct TopKRouting {
  std::vector<int> expert_index;  // S*K, row-major
  Tensor gates;                   // (S, K) summing to 1 per row
  Tensor logits;                  // (S, M) raw router scores
};

// Optional auxiliary load-balance terms, one per MoGE layer per forward.
struct MoGEAux {
  std::vector<Tensor> terms;
};

// Receives the gate mass each expert gets; implemented by the evaluation
// module to build activation histograms.
class ExpertUsageSink {
 public:
  virtual ~ExpertUsageSink() = default;
  virtual void add(int layer, int expert, double gate) = 0;
};

Tensor adapter_forward(const Tensor& f, const AdapterParams& p);
Tensor mhsa_forward(const Tensor& f, const AttentionParams& p, int heads);
Tensor ffn_forward(const Tensor& f, const FfnParams& p);

TopKRouting route_topk(const Tensor& z, const Tensor& router, int k);
// Dense (S, M) gate matrix: softmax over the K selected logits per row,
// exact zeros elsewhere. Plain values, for inspection and tests.
Tensor router_topk(const Tensor& z, const Tensor& router, int k);

// Sparse dispatch: each row goes to its K selected experts only.
// out[s] = sum_j gates[s,j] * E_{idx(s,j)}(z[s])
Tensor moge_forward(const Tensor& z, const MoGEParams& p, int layer_index = 0,
                    ExpertUsageSink* sink = nullptr, MoGEAux* aux = nullptr);

// One block: pre-LN MHSA and FFN with residuals, adapters parallel to
// both sublayers, then (optionally) MoGE applied residually to the rows
// {temporal} + {search}; template rows pass through the MoGE stage
// untouched.
Tensor transformer_block_forward(const Tensor& f, const TransformerLayerParams& layer,
                                 int heads, const AdapterPair* adapters,
                                 const MoGEParams* moge, const TokenSplit& split,
                                 int layer_index = 0, ExpertUsageSink* sink = nullptr,
                                 MoGEAux* aux = nullptr);

struct EncoderStack {
  int heads = 1;
  std::vector<TransformerLayerParams> layers;
  // index i applies to 1-based layer i+1; nullopt where the stage is absent
  std::vector<std::optional<AdapterPair>> adapters;
  std::vector<std::optional<MoGEParams>> moge;
  // closing normalization of the backbone; keeps the encoder output (and
  // with it the carried temporal token) on a bounded scale at any horizon
  LayerNormParams final_ln;
};

struct EncoderOutput {
  Tensor temporal;         // 1 x d
  Tensor template_tokens;  // G_t x d
  Tensor search_tokens;    // G_s x d
};

EncoderOutput encoder_forward(const Tensor& f0, const EncoderStack& stack,
                              const TokenSplit& split,
                              ExpertUsageSink* sink = nullptr,
                              MoGEAux* aux = nullptr);

}  // namespace pcsot
