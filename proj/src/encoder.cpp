// SPDX-License-Identifier: Apache-2.0
#include "pcsot/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pcsot {

Tensor adapter_forward(const Tensor& f, const AdapterParams& p) {
  Tensor gate = relu(matmul(f, p.w_s));                  // N x 1
  Tensor bottleneck = gelu(matmul(f, p.w_dn));           // N x r
  Tensor up = matmul(bottleneck, p.w_up);                // N x d
  return mul(gate, up);                                  // gate broadcasts over d
}

Tensor mhsa_forward(const Tensor& f, const AttentionParams& p, int heads) {
  const int t = f.dim(0);
  const int d = f.dim(1);
  if (d % heads != 0) throw ConfigError("mhsa_forward: heads must divide d");
  const int dh = d / heads;

  Tensor q = add(matmul(f, p.wq), p.bq);
  Tensor k = add(matmul(f, p.wk), p.bk);
  Tensor v = add(matmul(f, p.wv), p.bv);

  // (t, d) -> (heads, t, dh)
  Tensor q3 = swap01(reshape(q, {t, heads, dh}));
  Tensor k3 = swap01(reshape(k, {t, heads, dh}));
  Tensor v3 = swap01(reshape(v, {t, heads, dh}));

  Tensor scores = scale(matmul(q3, transpose_last2(k3)), 1.0 / std::sqrt(double(dh)));
  Tensor attn = softmax_lastdim(scores);
  Tensor ctx = matmul(attn, v3);                        // (heads, t, dh)
  Tensor merged = reshape(swap01(ctx), {t, d});
  return add(matmul(merged, p.wo), p.bo);
}

Tensor ffn_forward(const Tensor& f, const FfnParams& p) {
  return add(matmul(gelu(add(matmul(f, p.w1), p.b1)), p.w2), p.b2);
}

namespace {

// Indices of the k largest logits, ties by lowest index.
std::vector<int> topk_indices(const double* row, int m, int k) {
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (row[a] != row[b]) return row[a] > row[b];
    return a < b;
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

}  // namespace

TopKRouting route_topk(const Tensor& z, const Tensor& router, int k) {
  const int m = router.dim(1);
  if (k > m) throw ConfigError("route_topk: K exceeds expert count");
  Tensor logits = matmul(z, router);  // S x M
  const int s = logits.dim(0);

  TopKRouting out;
  out.logits = logits;
  out.expert_index.reserve(static_cast<std::size_t>(s) * k);
  std::vector<int> flat;
  flat.reserve(static_cast<std::size_t>(s) * k);
  for (int r = 0; r < s; ++r) {
    const double* row = logits.data().data() + static_cast<std::ptrdiff_t>(r) * m;
    for (int e : topk_indices(row, m, k)) {
      out.expert_index.push_back(e);
      flat.push_back(r * m + e);
    }
  }
  Tensor selected = reshape(gather_flat(logits, flat), {s, k});
  out.gates = softmax_lastdim(selected);
  return out;
}

Tensor router_topk(const Tensor& z, const Tensor& router, int k) {
  const TopKRouting r = route_topk(z, router, k);
  const int s = z.dim(0);
  const int m = router.dim(1);
  std::vector<double> dense(static_cast<std::size_t>(s) * m, 0.0);
  for (int row = 0; row < s; ++row)
    for (int j = 0; j < k; ++j)
      dense[static_cast<std::size_t>(row) * m +
            static_cast<std::size_t>(
                r.expert_index[static_cast<std::size_t>(row * k + j)])] =
          r.gates.at({row, j});
  return Tensor({s, m}, std::move(dense));
}

Tensor moge_forward(const Tensor& z, const MoGEParams& p, int layer_index,
                    ExpertUsageSink* sink, MoGEAux* aux) {
  const int s = z.dim(0);
  const int d = z.dim(1);
  const int m = static_cast<int>(p.experts.size());
  const int k = p.top_k;
  const TopKRouting routing = route_topk(z, p.router, k);

  if (sink) {
    for (int row = 0; row < s; ++row)
      for (int j = 0; j < k; ++j)
        sink->add(layer_index,
                  routing.expert_index[static_cast<std::size_t>(row * k + j)],
                  routing.gates.at({row, j}));
  }

  if (aux) {
    // importance-style balance term: M/K * sum_m f_m * P_m, where f_m is
    // the fraction of assignments expert m received (plain constant) and
    // P_m the mean full-softmax router probability (differentiable).
    std::vector<double> assign(static_cast<std::size_t>(m), 0.0);
    for (int e : routing.expert_index) assign[static_cast<std::size_t>(e)] += 1.0;
    std::vector<double> weight(static_cast<std::size_t>(m));
    for (int e = 0; e < m; ++e)
      weight[static_cast<std::size_t>(e)] =
          assign[static_cast<std::size_t>(e)] / (double(s) * k) * m / k;
    Tensor probs = softmax_lastdim(routing.logits);        // S x M
    Tensor mean_rows = scale(matmul(Tensor::full({1, s}, 1.0), probs), 1.0 / s);
    aux->terms.push_back(sum_all(mul(mean_rows, Tensor({1, m}, std::move(weight)))));
  }

  Tensor gates_col = reshape(routing.gates, {s * k, 1});
  Tensor out = Tensor::zeros({s, d});
  for (int e = 0; e < m; ++e) {
    std::vector<int> rows;       // token rows routed to expert e
    std::vector<int> gate_slot;  // their flat (row*k + j) positions
    for (int row = 0; row < s; ++row)
      for (int j = 0; j < k; ++j)
        if (routing.expert_index[static_cast<std::size_t>(row * k + j)] == e) {
          rows.push_back(row);
          gate_slot.push_back(row * k + j);
        }
    if (rows.empty()) continue;
    Tensor zin = gather_rows(z, rows);
    const ExpertParams& ex = p.experts[static_cast<std::size_t>(e)];
    Tensor h = add(matmul(gelu(add(matmul(zin, ex.w1), ex.b1)), ex.w2), ex.b2);
    Tensor g = gather_rows(gates_col, gate_slot);  // n x 1
    out = index_add_rows(out, rows, mul(g, h));
  }
  return out;
}

Tensor transformer_block_forward(const Tensor& f, const TransformerLayerParams& layer,
                                 int heads, const AdapterPair* adapters,
                                 const MoGEParams* moge, const TokenSplit& split,
                                 int layer_index, ExpertUsageSink* sink, MoGEAux* aux) {
  if (split.total() != f.dim(0))
    throw ContractError("transformer_block_forward: split does not match token count");

  Tensor norm1 = layer_norm(f, layer.ln1.gain, layer.ln1.bias);
  Tensor hidden = add(mhsa_forward(norm1, layer.attn, heads), f);
  if (adapters) hidden = add(hidden, adapter_forward(norm1, adapters->attn_side));

  Tensor norm2 = layer_norm(hidden, layer.ln2.gain, layer.ln2.bias);
  Tensor out = add(ffn_forward(norm2, layer.ffn), hidden);
  if (adapters) out = add(out, adapter_forward(norm2, adapters->ffn_side));

  if (moge) {
    // routed rows: temporal token plus the search tokens
    const int t0 = 1 + split.n_template;
    Tensor routed = concat_rows({slice_rows(out, 0, 1),
                                 slice_rows(out, t0, split.total())});
    Tensor mixed = add(routed, moge_forward(routed, *moge, layer_index, sink, aux));
    out = concat_rows({slice_rows(mixed, 0, 1),
                       slice_rows(out, 1, t0),
                       slice_rows(mixed, 1, 1 + split.n_search)});
  }
  return out;
}

EncoderOutput encoder_forward(const Tensor& f0, const EncoderStack& stack,
                              const TokenSplit& split, ExpertUsageSink* sink,
                              MoGEAux* aux) {
  if (f0.rank() != 2 || f0.dim(0) != split.total())
    throw ContractError("encoder_forward: input must be (1+Gt+Gs) x d");
  Tensor f = f0;
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    const AdapterPair* ad =
        stack.adapters[i].has_value() ? &*stack.adapters[i] : nullptr;
    const MoGEParams* mg = stack.moge[i].has_value() ? &*stack.moge[i] : nullptr;
    f = transformer_block_forward(f, stack.layers[i], stack.heads, ad, mg, split,
                                  static_cast<int>(i) + 1, sink, aux);
  }
  f = layer_norm(f, stack.final_ln.gain, stack.final_ln.bias);
  EncoderOutput out;
  out.temporal = slice_rows(f, 0, 1);
  out.template_tokens = slice_rows(f, 1, 1 + split.n_template);
  out.search_tokens = slice_rows(f, 1 + split.n_template, split.total());
  return out;
}

}  // namespace pcsot
