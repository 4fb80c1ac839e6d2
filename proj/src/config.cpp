// SPDX-License-Identifier: Apache-2.0
#include "pcsot/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace pcsot {

namespace {

using nlohmann::json;

std::vector<int> expand_placement(const json& value, int layers, int index_base,
                                  const std::string& key) {
  if (value.is_array()) {
    std::vector<int> out;
    for (const auto& v : value) {
      if (!v.is_number_integer())
        throw ConfigError(key + ": expected integer layer indices");
      out.push_back(v.get<int>());
    }
    return out;
  }
  if (!value.is_string())
    throw ConfigError(key + ": expected array of layers or preset string");
  const std::string preset = value.get<std::string>();
  std::vector<int> out;
  if (preset == "all") {
    for (int i = 1; i <= layers; ++i) out.push_back(i);
  } else if (preset == "even") {
    // layer numbers under the configured base; returned 1-based
    for (int i = 1; i <= layers; ++i) {
      const int numbered = index_base == 0 ? i - 1 : i;
      if (numbered % 2 == 0) out.push_back(i);
    }
  } else if (preset == "last") {
    out.push_back(layers);
  } else if (preset == "none") {
    // empty
  } else {
    throw ConfigError(key + ": unknown placement preset '" + preset + "'");
  }
  return out;
}

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "fixed") return MaskMode::kFixed;
  if (s == "dynamic_beta") return MaskMode::kDynamicBeta;
  if (s == "fully_learnable") return MaskMode::kFullyLearnable;
  throw ConfigError("mask_mode: unknown value '" + s + "'");
}

std::string mask_mode_name(MaskMode m) {
  switch (m) {
    case MaskMode::kFixed: return "fixed";
    case MaskMode::kDynamicBeta: return "dynamic_beta";
    case MaskMode::kFullyLearnable: return "fully_learnable";
  }
  return "dynamic_beta";
}

TemplateMode parse_template_mode(const std::string& s) {
  if (s == "first") return TemplateMode::kFirst;
  if (s == "previous") return TemplateMode::kPrevious;
  if (s == "merged") return TemplateMode::kMerged;
  throw ConfigError("template_mode: unknown value '" + s + "'");
}

std::string template_mode_name(TemplateMode m) {
  switch (m) {
    case TemplateMode::kFirst: return "first";
    case TemplateMode::kPrevious: return "previous";
    case TemplateMode::kMerged: return "merged";
  }
  return "previous";
}

void reject_unknown(const json& obj, const std::set<std::string>& known,
                    const std::string& scope) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key()))
      throw ConfigError("unknown config key '" + scope + it.key() + "'");
  }
}

}  // namespace

RunConfig run_config_from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid json: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be an object");

  RunConfig cfg;
  if (root.contains("preset")) {
    const std::string preset = root["preset"].get<std::string>();
    if (preset == "desk") cfg.model = ModelConfig::desk();
    else if (preset == "large") cfg.model = ModelConfig::large();
    else if (preset == "micro") cfg.model = ModelConfig::micro();
    else throw ConfigError("unknown preset '" + preset + "'");
  }
  reject_unknown(root, {"preset", "model", "train"}, "");

  int index_base = 1;
  if (root.contains("model")) {
    const json& m = root["model"];
    reject_unknown(
        m,
        {"layers", "dim", "heads", "ffn_mult", "adapter_rank", "num_experts",
         "top_k", "adapter_layers", "moge_layers", "layer_index_base", "n_template",
         "n_search", "groups_template", "groups_search", "knn", "template_enlarge",
         "search_enlarge", "mask_fg", "mask_bg", "mask_search", "mask_mode",
         "template_mode", "use_adapters", "use_moge", "use_temporal_token",
         "full_finetune", "freeze_embedding", "aux_load_balance", "aux_coeff",
         "init_seed"},
        "model.");
    ModelConfig& mc = cfg.model;
    if (m.contains("layers")) mc.layers = m["layers"].get<int>();
    if (m.contains("dim")) mc.dim = m["dim"].get<int>();
    if (m.contains("heads")) mc.heads = m["heads"].get<int>();
    if (m.contains("ffn_mult")) mc.ffn_mult = m["ffn_mult"].get<int>();
    if (m.contains("adapter_rank")) mc.adapter_rank = m["adapter_rank"].get<int>();
    if (m.contains("num_experts")) mc.num_experts = m["num_experts"].get<int>();
    if (m.contains("top_k")) mc.top_k = m["top_k"].get<int>();
    if (m.contains("layer_index_base")) {
      index_base = m["layer_index_base"].get<int>();
      if (index_base != 0 && index_base != 1)
        throw ConfigError("layer_index_base must be 0 or 1");
    }
    if (m.contains("adapter_layers"))
      mc.adapter_layers =
          expand_placement(m["adapter_layers"], mc.layers, index_base, "adapter_layers");
    else if (m.contains("layers"))
      mc.adapter_layers = expand_placement(json("all"), mc.layers, index_base,
                                           "adapter_layers");
    if (m.contains("moge_layers"))
      mc.moge_layers =
          expand_placement(m["moge_layers"], mc.layers, index_base, "moge_layers");
    else if (m.contains("layers"))
      mc.moge_layers = expand_placement(json("even"), mc.layers, index_base,
                                        "moge_layers");
    if (m.contains("n_template")) mc.n_template = m["n_template"].get<int>();
    if (m.contains("n_search")) mc.n_search = m["n_search"].get<int>();
    if (m.contains("groups_template"))
      mc.groups_template = m["groups_template"].get<int>();
    if (m.contains("groups_search")) mc.groups_search = m["groups_search"].get<int>();
    if (m.contains("knn")) mc.knn = m["knn"].get<int>();
    if (m.contains("template_enlarge"))
      mc.template_enlarge = m["template_enlarge"].get<double>();
    if (m.contains("search_enlarge"))
      mc.search_enlarge = m["search_enlarge"].get<double>();
    if (m.contains("mask_fg")) mc.mask_fg = m["mask_fg"].get<double>();
    if (m.contains("mask_bg")) mc.mask_bg = m["mask_bg"].get<double>();
    if (m.contains("mask_search")) mc.mask_search = m["mask_search"].get<double>();
    if (m.contains("mask_mode"))
      mc.mask_mode = parse_mask_mode(m["mask_mode"].get<std::string>());
    if (m.contains("template_mode"))
      mc.template_mode = parse_template_mode(m["template_mode"].get<std::string>());
    if (m.contains("use_adapters")) mc.use_adapters = m["use_adapters"].get<bool>();
    if (m.contains("use_moge")) mc.use_moge = m["use_moge"].get<bool>();
    if (m.contains("use_temporal_token"))
      mc.use_temporal_token = m["use_temporal_token"].get<bool>();
    if (m.contains("full_finetune")) mc.full_finetune = m["full_finetune"].get<bool>();
    if (m.contains("freeze_embedding"))
      mc.freeze_embedding = m["freeze_embedding"].get<bool>();
    if (m.contains("aux_load_balance"))
      mc.aux_load_balance = m["aux_load_balance"].get<bool>();
    if (m.contains("aux_coeff")) mc.aux_coeff = m["aux_coeff"].get<double>();
    if (m.contains("init_seed")) mc.init_seed = m["init_seed"].get<std::uint64_t>();
  }

  if (root.contains("train")) {
    const json& t = root["train"];
    reject_unknown(t,
                   {"clip_length", "lr", "beta1", "beta2", "eps", "weight_decay",
                    "steps", "batch_size", "lambda_cls", "lambda_reg", "warmup_steps",
                    "jitter_xy", "jitter_z", "jitter_yaw", "seed"},
                   "train.");
    TrainConfig& tc = cfg.train;
    if (t.contains("clip_length")) tc.clip_length = t["clip_length"].get<int>();
    if (t.contains("lr")) tc.lr = t["lr"].get<double>();
    if (t.contains("beta1")) tc.beta1 = t["beta1"].get<double>();
    if (t.contains("beta2")) tc.beta2 = t["beta2"].get<double>();
    if (t.contains("eps")) tc.eps = t["eps"].get<double>();
    if (t.contains("weight_decay")) tc.weight_decay = t["weight_decay"].get<double>();
    if (t.contains("steps")) tc.steps = t["steps"].get<int>();
    if (t.contains("batch_size")) tc.batch_size = t["batch_size"].get<int>();
    if (t.contains("lambda_cls")) tc.lambda_cls = t["lambda_cls"].get<double>();
    if (t.contains("lambda_reg")) tc.lambda_reg = t["lambda_reg"].get<double>();
    if (t.contains("warmup_steps")) tc.warmup_steps = t["warmup_steps"].get<int>();
    if (t.contains("jitter_xy")) tc.jitter_xy = t["jitter_xy"].get<double>();
    if (t.contains("jitter_z")) tc.jitter_z = t["jitter_z"].get<double>();
    if (t.contains("jitter_yaw")) tc.jitter_yaw = t["jitter_yaw"].get<double>();
    if (t.contains("seed")) tc.seed = t["seed"].get<std::uint64_t>();
  }

  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig run_config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return run_config_from_json_text(text);
}

std::string run_config_to_json_text(const RunConfig& cfg) {
  json m;
  m["layers"] = cfg.model.layers;
  m["dim"] = cfg.model.dim;
  m["heads"] = cfg.model.heads;
  m["ffn_mult"] = cfg.model.ffn_mult;
  m["adapter_rank"] = cfg.model.adapter_rank;
  m["num_experts"] = cfg.model.num_experts;
  m["top_k"] = cfg.model.top_k;
  m["adapter_layers"] = cfg.model.adapter_layers;
  m["moge_layers"] = cfg.model.moge_layers;
  m["n_template"] = cfg.model.n_template;
  m["n_search"] = cfg.model.n_search;
  m["groups_template"] = cfg.model.groups_template;
  m["groups_search"] = cfg.model.groups_search;
  m["knn"] = cfg.model.knn;
  m["template_enlarge"] = cfg.model.template_enlarge;
  m["search_enlarge"] = cfg.model.search_enlarge;
  m["mask_fg"] = cfg.model.mask_fg;
  m["mask_bg"] = cfg.model.mask_bg;
  m["mask_search"] = cfg.model.mask_search;
  m["mask_mode"] = mask_mode_name(cfg.model.mask_mode);
  m["template_mode"] = template_mode_name(cfg.model.template_mode);
  m["use_adapters"] = cfg.model.use_adapters;
  m["use_moge"] = cfg.model.use_moge;
  m["use_temporal_token"] = cfg.model.use_temporal_token;
  m["full_finetune"] = cfg.model.full_finetune;
  m["freeze_embedding"] = cfg.model.freeze_embedding;
  m["aux_load_balance"] = cfg.model.aux_load_balance;
  m["aux_coeff"] = cfg.model.aux_coeff;
  m["init_seed"] = cfg.model.init_seed;

  json t;
  t["clip_length"] = cfg.train.clip_length;
  t["lr"] = cfg.train.lr;
  t["beta1"] = cfg.train.beta1;
  t["beta2"] = cfg.train.beta2;
  t["eps"] = cfg.train.eps;
  t["weight_decay"] = cfg.train.weight_decay;
  t["steps"] = cfg.train.steps;
  t["batch_size"] = cfg.train.batch_size;
  t["lambda_cls"] = cfg.train.lambda_cls;
  t["lambda_reg"] = cfg.train.lambda_reg;
  t["warmup_steps"] = cfg.train.warmup_steps;
  t["jitter_xy"] = cfg.train.jitter_xy;
  t["jitter_z"] = cfg.train.jitter_z;
  t["jitter_yaw"] = cfg.train.jitter_yaw;
  t["seed"] = cfg.train.seed;

  json root;
  root["model"] = m;
  root["train"] = t;
  return root.dump(2);
}

}  // namespace pcsot
