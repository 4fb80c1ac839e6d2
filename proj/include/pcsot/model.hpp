// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcsot/embedding.hpp"
#include "pcsot/encoder.hpp"
#include "pcsot/geometry.hpp"
#include "pcsot/temporal.hpp"
#include "pcsot/tensor.hpp"

namespace pcsot {

enum class MaskMode { kFixed, kDynamicBeta, kFullyLearnable };
enum class TemplateMode { kFirst, kPrevious, kMerged };

struct ModelConfig {
  int layers = 4;
  int dim = 64;
  int heads = 4;
  int ffn_mult = 4;
  int adapter_rank = 16;
  int num_experts = 8;
  int top_k = 4;
  std::vector<int> adapter_layers{1, 2, 3, 4};  // 1-based
  std::vector<int> moge_layers{2, 4};           // 1-based
  int n_template = 48;
  int n_search = 48;
  int groups_template = 24;
  int groups_search = 24;
  int knn = 8;
  double template_enlarge = 0.5;  // meters per side in BEV
  double search_enlarge = 2.0;
  double mask_fg = 0.8;
  double mask_bg = 0.2;
  double mask_search = 0.5;
  MaskMode mask_mode = MaskMode::kDynamicBeta;
  TemplateMode template_mode = TemplateMode::kPrevious;
  bool use_adapters = true;
  bool use_moge = true;
  bool use_temporal_token = true;
  bool full_finetune = false;
  bool freeze_embedding = false;  // pin patch/positional embedding at init
  bool aux_load_balance = false;
  double aux_coeff = 0.01;
  std::uint64_t init_seed = 1;

  void validate() const;
  int expert_hidden() const { return (dim + 7) / 8; }

  static ModelConfig desk();
  static ModelConfig large();
  static ModelConfig micro();  // tiny preset for gradient checking
};

struct HeadParams {
  Tensor w1, b1;  // d x d
  Tensor w2, b2;  // d x 5: (score logit, dx, dy, dz, dyaw)
};

struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

struct Prediction {
  Box3D box;
  double confidence = 0;  // sigmoid of the top score logit
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Parameter* find(const std::string& name) const;

  struct FrameInput {
    RegionSample template_region;
    RegionSample search_region;
  };

  struct FrameOutput {
    Tensor head_out;                  // G_s x 5
    std::vector<Vec3> search_centers;  // canonical frame of the search crop
    Tensor temporal_out;              // 1 x d; empty when the token is disabled
    Tensor aux_loss;                  // scalar; empty unless load balancing is on
  };

  // One encoder pass over prepared template/search regions. `carried` is
  // the previous frame's temporal output (empty at t = 1).
  FrameOutput forward_frame(const FrameInput& in, const Tensor& carried,
                            ExpertUsageSink* sink = nullptr) const;

  // submodules; tensor handles share storage with the registry
  PatchEmbedParams patch_embed;
  PosEmbedParams pos_embed;
  EncoderStack encoder;
  Tensor temporal_initial;  // 1 x d
  Tensor beta_template, beta_search;            // mask_mode == kDynamicBeta
  Tensor learn_mask_template, learn_mask_search;  // mask_mode == kFullyLearnable
  HeadParams head;

 private:
  Tensor add_param(const std::string& name, Tensor t, bool frozen);
  Tensor masked_tokens(const TokenBatch& tokens, const RegionSample& region,
                       RegionKind kind) const;

  ModelConfig cfg_;
  std::vector<Parameter> params_;
};

// Crop template and search regions for one tracked frame. The search
// reference box defines the canonical frame of the search crop.
Model::FrameInput make_frame_input(const PointCloud& template_cloud,
                                   const Box3D& template_box,
                                   const PointCloud& search_cloud,
                                   const Box3D& search_ref_box,
                                   const ModelConfig& cfg, std::uint64_t seed);

// Score-weighted box head readout: attention over token logits combines
// per-token (center + delta) into a canonical offset applied to prev_box.
Prediction localize(const Tensor& head_out, const std::vector<Vec3>& centers,
                    const Box3D& prev_box);

struct ParamPartition {
  std::vector<std::string> frozen;
  std::vector<std::string> tunable;
};
ParamPartition partition_parameters(const Model& model);

long long count_tunable(const Model& model);
long long count_tunable_closed_form(const ModelConfig& cfg);

// FNV hash of each frozen parameter's bytes, keyed by name order.
std::vector<std::pair<std::string, std::uint64_t>> frozen_param_hashes(
    const Model& model);

}  // namespace pcsot
