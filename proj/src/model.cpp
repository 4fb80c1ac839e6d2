// SPDX-License-Identifier: Apache-2.0
#include "pcsot/model.hpp"

#include <algorithm>
#include <cmath>

#include "pcsot/rng.hpp"

namespace pcsot {

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (dim < 2 || dim % 2 != 0) throw ConfigError("dim must be even and >= 2");
  if (heads < 1 || dim % heads != 0) throw ConfigError("heads must divide dim");
  if (adapter_rank < 1 || adapter_rank >= dim)
    throw ConfigError("adapter_rank must be in [1, dim)");
  if (num_experts < 2 || top_k < 1 || top_k >= num_experts)
    throw ConfigError("expert counts must satisfy 1 <= top_k < num_experts");
  for (int i : adapter_layers)
    if (i < 1 || i > layers)
      throw ConfigError("adapter layer index " + std::to_string(i) +
                        " outside [1, " + std::to_string(layers) + "]");
  for (int i : moge_layers)
    if (i < 1 || i > layers)
      throw ConfigError("moge layer index " + std::to_string(i) + " outside [1, " +
                        std::to_string(layers) + "]");
  if (n_template < 1 || n_search < 1) throw ConfigError("region sizes must be >= 1");
  if (groups_template < 1 || groups_template > n_template ||
      groups_search < 1 || groups_search > n_search)
    throw ConfigError("group counts must be in [1, region size]");
  if (knn < 1) throw ConfigError("knn must be >= 1");
  if (template_enlarge < 0 || search_enlarge < 0)
    throw ConfigError("enlarge margins must be >= 0");
  if (aux_coeff < 0) throw ConfigError("aux_coeff must be >= 0");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::large() {
  ModelConfig c;
  c.layers = 12;
  c.dim = 384;
  c.heads = 6;
  c.adapter_rank = 72;
  c.adapter_layers.clear();
  for (int i = 1; i <= 12; ++i) c.adapter_layers.push_back(i);
  c.moge_layers = {2, 4, 6, 8, 10, 12};
  c.n_template = 128;
  c.n_search = 128;
  c.groups_template = 128;
  c.groups_search = 128;
  return c;
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.layers = 2;
  c.dim = 16;
  c.heads = 2;
  c.adapter_rank = 4;
  c.num_experts = 4;
  c.top_k = 2;
  c.adapter_layers = {1, 2};
  c.moge_layers = {2};
  c.n_template = 16;
  c.n_search = 16;
  c.groups_template = 8;
  c.groups_search = 8;
  c.knn = 4;
  return c;
}

Tensor Model::add_param(const std::string& name, Tensor t, bool frozen) {
  t.set_requires_grad(!frozen);
  params_.push_back({name, t, frozen});
  return params_.back().value;
}

const Parameter* Model::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.dim;
  const int hidden = d * cfg_.ffn_mult;
  const bool backbone_frozen = !cfg_.full_finetune;
  Rng root(cfg_.init_seed);

  // frozen backbone: seeded scaled-gaussian weights standing in for a
  // pretrained model; a checkpoint load can overwrite them with real values
  Rng backbone_rng = root.fork(0);
  encoder.heads = cfg_.heads;
  for (int i = 1; i <= cfg_.layers; ++i) {
    const std::string base = "backbone.layer" + std::to_string(i) + ".";
    TransformerLayerParams lp;
    lp.ln1.gain = add_param(base + "ln1.gain", Tensor::full({d}, 1.0), backbone_frozen);
    lp.ln1.bias = add_param(base + "ln1.bias", Tensor::zeros({d}), backbone_frozen);
    lp.ln2.gain = add_param(base + "ln2.gain", Tensor::full({d}, 1.0), backbone_frozen);
    lp.ln2.bias = add_param(base + "ln2.bias", Tensor::zeros({d}), backbone_frozen);
    auto mat = [&](const std::string& n, int rows, int cols) {
      return add_param(base + n, randn({rows, cols}, backbone_rng, 0.02),
                       backbone_frozen);
    };
    auto vec = [&](const std::string& n, int size) {
      return add_param(base + n, Tensor::zeros({size}), backbone_frozen);
    };
    lp.attn.wq = mat("attn.wq", d, d);
    lp.attn.bq = vec("attn.bq", d);
    lp.attn.wk = mat("attn.wk", d, d);
    lp.attn.bk = vec("attn.bk", d);
    lp.attn.wv = mat("attn.wv", d, d);
    lp.attn.bv = vec("attn.bv", d);
    lp.attn.wo = mat("attn.wo", d, d);
    lp.attn.bo = vec("attn.bo", d);
    lp.ffn.w1 = mat("ffn.w1", d, hidden);
    lp.ffn.b1 = vec("ffn.b1", hidden);
    lp.ffn.w2 = mat("ffn.w2", hidden, d);
    lp.ffn.b2 = vec("ffn.b2", d);
    encoder.layers.push_back(lp);
  }
  encoder.final_ln.gain =
      add_param("backbone.final_ln.gain", Tensor::full({d}, 1.0), backbone_frozen);
  encoder.final_ln.bias =
      add_param("backbone.final_ln.bias", Tensor::zeros({d}), backbone_frozen);

  // patch + positional embedding; first-layer biases start small-random
  // because neighborhood center rows are exactly (0,0,0) and would pin
  // zero-initialized ReLU pre-activations on the kink
  Rng embed_rng = root.fork(1);
  const bool embed_frozen = cfg_.freeze_embedding;
  patch_embed.w1 = add_param("embed.patch.w1", kaiming_normal(3, d / 2, embed_rng), embed_frozen);
  patch_embed.b1 = add_param("embed.patch.b1", randn({d / 2}, embed_rng, 0.02), embed_frozen);
  patch_embed.w2 = add_param("embed.patch.w2", kaiming_normal(d / 2, d, embed_rng), embed_frozen);
  patch_embed.b2 = add_param("embed.patch.b2", Tensor::zeros({d}), embed_frozen);
  pos_embed.w1 = add_param("embed.pos.w1", kaiming_normal(3, d, embed_rng), embed_frozen);
  pos_embed.b1 = add_param("embed.pos.b1", randn({d}, embed_rng, 0.02), embed_frozen);
  pos_embed.w2 = add_param("embed.pos.w2", kaiming_normal(d, d, embed_rng), embed_frozen);
  pos_embed.b2 = add_param("embed.pos.b2", Tensor::zeros({d}), embed_frozen);

  // adapters: zero-initialized up-projection keeps the frozen baseline at
  // start, and the small down/score scales let the embedding and head
  // settle before the adapters engage
  Rng adapter_rng = root.fork(2);
  const int r = cfg_.adapter_rank;
  const double adapter_std = 0.005;
  for (int i = 1; i <= cfg_.layers; ++i) {
    const bool present =
        cfg_.use_adapters &&
        std::find(cfg_.adapter_layers.begin(), cfg_.adapter_layers.end(), i) !=
            cfg_.adapter_layers.end();
    if (!present) {
      encoder.adapters.emplace_back(std::nullopt);
      continue;
    }
    const std::string base = "adapter.layer" + std::to_string(i) + ".";
    AdapterPair pair;
    for (auto [side, tag] : {std::pair<AdapterParams*, const char*>{&pair.attn_side, "attn."},
                             {&pair.ffn_side, "ffn."}}) {
      side->w_dn = add_param(base + tag + "w_dn",
                             randn({d, r}, adapter_rng, adapter_std), false);
      side->w_up = add_param(base + tag + "w_up", Tensor::zeros({r, d}), false);
      side->w_s = add_param(base + tag + "w_s",
                            randn({d, 1}, adapter_rng, adapter_std), false);
    }
    encoder.adapters.emplace_back(std::move(pair));
  }

  // geometry experts: zero-initialized second layer makes the layer start
  // as identity through the residual
  Rng moge_rng = root.fork(3);
  const int eh = cfg_.expert_hidden();
  for (int i = 1; i <= cfg_.layers; ++i) {
    const bool present =
        cfg_.use_moge && std::find(cfg_.moge_layers.begin(), cfg_.moge_layers.end(),
                                   i) != cfg_.moge_layers.end();
    if (!present) {
      encoder.moge.emplace_back(std::nullopt);
      continue;
    }
    const std::string base = "moge.layer" + std::to_string(i) + ".";
    MoGEParams mp;
    mp.top_k = cfg_.top_k;
    mp.router = add_param(base + "router", randn({d, cfg_.num_experts}, moge_rng, 0.02),
                          false);
    for (int e = 0; e < cfg_.num_experts; ++e) {
      const std::string eb = base + "expert" + std::to_string(e) + ".";
      ExpertParams ex;
      ex.w1 = add_param(eb + "w1", kaiming_normal(d, eh, moge_rng), false);
      ex.b1 = add_param(eb + "b1", Tensor::zeros({eh}), false);
      ex.w2 = add_param(eb + "w2", Tensor::zeros({eh, d}), false);
      ex.b2 = add_param(eb + "b2", Tensor::zeros({d}), false);
      mp.experts.push_back(ex);
    }
    encoder.moge.emplace_back(std::move(mp));
  }

  // temporal token
  Rng temporal_rng = root.fork(4);
  if (cfg_.use_temporal_token)
    temporal_initial = add_param("temporal.initial", randn({1, d}, temporal_rng, 0.02),
                                 false);

  // mask weights
  if (cfg_.mask_mode == MaskMode::kDynamicBeta) {
    beta_template = add_param("mask.beta_template",
                              Tensor::full({cfg_.groups_template, 1}, 1.0), false);
    beta_search = add_param("mask.beta_search",
                            Tensor::full({cfg_.groups_search, 1}, 1.0), false);
  } else if (cfg_.mask_mode == MaskMode::kFullyLearnable) {
    learn_mask_template = add_param(
        "mask.learn_template", Tensor::full({cfg_.groups_template, 1}, 0.5), false);
    learn_mask_search = add_param(
        "mask.learn_search", Tensor::full({cfg_.groups_search, 1}, 0.5), false);
  }

  // localization head
  Rng head_rng = root.fork(5);
  head.w1 = add_param("head.w1", kaiming_normal(d, d, head_rng), false);
  head.b1 = add_param("head.b1", Tensor::zeros({d}), false);
  head.w2 = add_param("head.w2", randn({d, 5}, head_rng, 0.02), false);
  head.b2 = add_param("head.b2", Tensor::zeros({5}), false);
}

Tensor Model::masked_tokens(const TokenBatch& tokens, const RegionSample& region,
                            RegionKind kind) const {
  const int g = tokens.tokens.dim(0);
  if (cfg_.mask_mode == MaskMode::kFullyLearnable) {
    const Tensor& lm = kind == RegionKind::kTemplate ? learn_mask_template
                                                     : learn_mask_search;
    return add(tokens.tokens, lm);
  }
  const std::vector<double> point_mask = build_masks(
      region, region.origin_box, kind, cfg_.mask_fg, cfg_.mask_bg, cfg_.mask_search);
  std::vector<double> vals(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i)
    vals[static_cast<std::size_t>(i)] = point_mask[static_cast<std::size_t>(
        tokens.center_indices[static_cast<std::size_t>(i)])];
  Tensor mask({g, 1}, std::move(vals));
  if (cfg_.mask_mode == MaskMode::kFixed) return add(tokens.tokens, mask);
  const Tensor& beta =
      kind == RegionKind::kTemplate ? beta_template : beta_search;
  return apply_dynamic_mask(tokens.tokens, mask, beta);
}

Model::FrameOutput Model::forward_frame(const FrameInput& in, const Tensor& carried,
                                        ExpertUsageSink* sink) const {
  TokenBatch templ = embed_region(in.template_region, cfg_.groups_template, cfg_.knn,
                                  patch_embed, pos_embed);
  templ.kind = RegionKind::kTemplate;
  TokenBatch search = embed_region(in.search_region, cfg_.groups_search, cfg_.knn,
                                   patch_embed, pos_embed);
  search.kind = RegionKind::kSearch;

  Tensor templ_tokens = masked_tokens(templ, in.template_region, RegionKind::kTemplate);
  Tensor search_tokens = masked_tokens(search, in.search_region, RegionKind::kSearch);

  Tensor t0;
  if (cfg_.use_temporal_token) {
    TemporalToken tok{temporal_initial, carried};
    t0 = propagate_temporal_token(tok);
  } else {
    t0 = Tensor::zeros({1, cfg_.dim});
  }

  Tensor f0 = concat_rows({t0, templ_tokens, search_tokens});
  const TokenSplit split{cfg_.groups_template, cfg_.groups_search};

  MoGEAux aux;
  MoGEAux* aux_ptr = cfg_.aux_load_balance ? &aux : nullptr;
  EncoderOutput enc = encoder_forward(f0, encoder, split, sink, aux_ptr);

  Tensor h = add(matmul(gelu(add(matmul(enc.search_tokens, head.w1), head.b1)),
                        head.w2),
                 head.b2);

  FrameOutput out;
  out.head_out = h;
  out.search_centers = search.centers;
  if (cfg_.use_temporal_token) out.temporal_out = enc.temporal;
  if (cfg_.aux_load_balance && !aux.terms.empty()) {
    Tensor total = aux.terms[0];
    for (std::size_t i = 1; i < aux.terms.size(); ++i) total = add(total, aux.terms[i]);
    out.aux_loss = total;
  }
  return out;
}

Model::FrameInput make_frame_input(const PointCloud& template_cloud,
                                   const Box3D& template_box,
                                   const PointCloud& search_cloud,
                                   const Box3D& search_ref_box,
                                   const ModelConfig& cfg, std::uint64_t seed) {
  Model::FrameInput in;
  in.template_region = crop_region(template_cloud, template_box, cfg.template_enlarge,
                                   cfg.n_template, RegionKind::kTemplate, seed);
  in.search_region = crop_region(search_cloud, search_ref_box, cfg.search_enlarge,
                                 cfg.n_search, RegionKind::kSearch, seed ^ 0x9e3779b9ull);
  return in;
}

Prediction localize(const Tensor& head_out, const std::vector<Vec3>& centers,
                    const Box3D& prev_box) {
  const int g = head_out.dim(0);
  if (static_cast<int>(centers.size()) != g)
    throw ContractError("localize: centers do not match head output rows");
  const auto& h = head_out.data();
  auto cell = [&](int i, int j) { return h[static_cast<std::size_t>(i) * 5 + static_cast<std::size_t>(j)]; };

  double mx = cell(0, 0);
  for (int i = 1; i < g; ++i) mx = std::max(mx, cell(i, 0));
  double denom = 0;
  std::vector<double> a(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i) {
    a[static_cast<std::size_t>(i)] = std::exp(cell(i, 0) - mx);
    denom += a[static_cast<std::size_t>(i)];
  }
  std::array<double, 4> offset{0, 0, 0, 0};
  for (int i = 0; i < g; ++i) {
    const double w = a[static_cast<std::size_t>(i)] / denom;
    offset[0] += w * (centers[static_cast<std::size_t>(i)].x + cell(i, 1));
    offset[1] += w * (centers[static_cast<std::size_t>(i)].y + cell(i, 2));
    offset[2] += w * (centers[static_cast<std::size_t>(i)].z + cell(i, 3));
    offset[3] += w * cell(i, 4);
  }
  Prediction pred;
  pred.box = apply_box_offset(prev_box, offset);
  pred.confidence = sigmoid(mx);
  return pred;
}

ParamPartition partition_parameters(const Model& model) {
  ParamPartition part;
  for (const auto& p : model.parameters())
    (p.frozen ? part.frozen : part.tunable).push_back(p.name);
  return part;
}

long long count_tunable(const Model& model) {
  long long total = 0;
  for (const auto& p : model.parameters())
    if (!p.frozen) total += p.value.size();
  return total;
}

long long count_tunable_closed_form(const ModelConfig& cfg) {
  const long long d = cfg.dim;
  const long long r = cfg.adapter_rank;
  const long long m = cfg.num_experts;
  const long long eh = cfg.expert_hidden();
  long long total = 0;
  if (cfg.use_adapters)
    total += static_cast<long long>(cfg.adapter_layers.size()) * 2 * (2 * d * r + d);
  if (cfg.use_moge)
    total += static_cast<long long>(cfg.moge_layers.size()) *
             (d * m + m * (2 * d * eh + d + eh));
  if (cfg.use_temporal_token) total += d;
  if (cfg.mask_mode == MaskMode::kDynamicBeta ||
      cfg.mask_mode == MaskMode::kFullyLearnable)
    total += cfg.groups_template + cfg.groups_search;
  // head d -> d -> 5
  total += d * d + d + d * 5 + 5;
  if (!cfg.freeze_embedding) {
    // patch 3 -> d/2 -> d and positional 3 -> d -> d
    total += 3 * (d / 2) + d / 2 + (d / 2) * d + d;
    total += 3 * d + d + d * d + d;
  }
  if (cfg.full_finetune) {
    const long long hidden = d * cfg.ffn_mult;
    total += cfg.layers * (4 * (d * d + d) + d * hidden + hidden + hidden * d + d +
                           4 * d);
    total += 2 * d;  // final layer norm
  }
  return total;
}

std::vector<std::pair<std::string, std::uint64_t>> frozen_param_hashes(
    const Model& model) {
  std::vector<std::pair<std::string, std::uint64_t>> out;
  for (const auto& p : model.parameters()) {
    if (!p.frozen) continue;
    const auto& d = p.value.data();
    out.emplace_back(p.name, fnv1a(d.data(), d.size() * sizeof(double)));
  }
  return out;
}

}  // namespace pcsot
