// SPDX-License-Identifier: Apache-2.0
#include "pcsot/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pcsot/rng.hpp"

namespace pcsot {

void TrainConfig::validate() const {
  if (clip_length < 2) throw ConfigError("clip_length must be >= 2");
  if (lr <= 0) throw ConfigError("lr must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ConfigError("optimizer moments must be in [0, 1)");
  if (eps <= 0) throw ConfigError("eps must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lambda_cls < 0 || lambda_reg < 0) throw ConfigError("loss weights must be >= 0");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
}

LossBreakdown compute_loss(const Tensor& head_out, const std::vector<Vec3>& centers,
                           const Box3D& gt_canonical, double lambda_cls,
                           double lambda_reg) {
  const int g = head_out.dim(0);
  if (static_cast<int>(centers.size()) != g)
    throw ContractError("compute_loss: centers do not match head output rows");

  std::vector<double> labels(static_cast<std::size_t>(g));
  std::vector<int> positives;
  for (int i = 0; i < g; ++i) {
    const bool inside = point_in_box(centers[static_cast<std::size_t>(i)], gt_canonical);
    labels[static_cast<std::size_t>(i)] = inside ? 1.0 : 0.0;
    if (inside) positives.push_back(i);
  }

  Tensor logits = slice_cols(head_out, 0, 1);
  Tensor cls = bce_with_logits_mean(logits, Tensor({g, 1}, std::move(labels)));

  LossBreakdown out;
  out.cls = cls.data()[0];
  if (positives.empty()) {
    out.total = scale(cls, lambda_cls);
    out.reg = 0.0;
    return out;
  }

  Tensor deltas = gather_rows(slice_cols(head_out, 1, 5), positives);
  const int n = static_cast<int>(positives.size());
  std::vector<double> target(static_cast<std::size_t>(n) * 4);
  for (int i = 0; i < n; ++i) {
    const Vec3& c = centers[static_cast<std::size_t>(positives[static_cast<std::size_t>(i)])];
    target[static_cast<std::size_t>(i) * 4] = gt_canonical.center.x - c.x;
    target[static_cast<std::size_t>(i) * 4 + 1] = gt_canonical.center.y - c.y;
    target[static_cast<std::size_t>(i) * 4 + 2] = gt_canonical.center.z - c.z;
    target[static_cast<std::size_t>(i) * 4 + 3] = gt_canonical.yaw;
  }
  Tensor reg = huber_mean(deltas, Tensor({n, 4}, std::move(target)), 1.0);
  out.reg = reg.data()[0];
  out.total = add(scale(cls, lambda_cls), scale(reg, lambda_reg));
  return out;
}

void AdamW::step(std::vector<Parameter>& params) {
  if (state_.empty()) state_.resize(params.size());
  if (state_.size() != params.size())
    throw ContractError("AdamW: parameter list changed size");
  ++t_;
  double lr = cfg_.lr;
  if (cfg_.warmup_steps > 0 && t_ <= cfg_.warmup_steps)
    lr *= static_cast<double>(t_) / cfg_.warmup_steps;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params[pi];
    if (p.frozen) continue;
    auto& st = state_[pi];
    const int n = p.value.size();
    if (st.m.empty()) {
      st.m.assign(static_cast<std::size_t>(n), 0.0);
      st.v.assign(static_cast<std::size_t>(n), 0.0);
    }
    const std::vector<double>* grad = p.value.grad();
    auto& data = p.value.mutable_data();
    for (int i = 0; i < n; ++i) {
      const double g = grad ? (*grad)[static_cast<std::size_t>(i)] : 0.0;
      st.m[static_cast<std::size_t>(i)] =
          cfg_.beta1 * st.m[static_cast<std::size_t>(i)] + (1 - cfg_.beta1) * g;
      st.v[static_cast<std::size_t>(i)] =
          cfg_.beta2 * st.v[static_cast<std::size_t>(i)] + (1 - cfg_.beta2) * g * g;
      const double mhat = st.m[static_cast<std::size_t>(i)] / bc1;
      const double vhat = st.v[static_cast<std::size_t>(i)] / bc2;
      double& w = data[static_cast<std::size_t>(i)];
      w -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w);
    }
    p.value.zero_grad();
  }
}

namespace {

struct ClipRef {
  int sequence = 0;
  int start = 0;
};

Box3D jitter_box(const Box3D& box, const TrainConfig& cfg, Rng& rng) {
  Vec3 c = box.center;
  c.x += rng.normal() * cfg.jitter_xy;
  c.y += rng.normal() * cfg.jitter_xy;
  c.z += rng.normal() * cfg.jitter_z;
  return Box3D(c, box.yaw + rng.normal() * cfg.jitter_yaw, box.w, box.l, box.h);
}

}  // namespace

TrainResult train(const std::vector<Sequence>& dataset, Model& model,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  const ModelConfig& mc = model.config();

  std::vector<ClipRef> clips;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const int len = static_cast<int>(dataset[s].frames.size());
    for (int start = 0; start + cfg.clip_length <= len; ++start)
      clips.push_back({static_cast<int>(s), start});
  }
  if (clips.empty()) throw ConfigError("train: no clip fits the clip_length");

  AdamW opt(cfg);
  TrainResult result;
  Rng order_rng(splitmix64(cfg.seed ^ 0xc11f5ull));
  Rng jitter_rng(splitmix64(cfg.seed ^ 0x11a271ull));

  std::vector<std::size_t> order(clips.size());
  std::size_t cursor = order.size();  // force an initial shuffle

  for (int step = 0; step < cfg.steps; ++step) {
    Tape tape;
    TapeScope scope(tape);
    Tensor batch_loss = Tensor::scalar(0.0);
    double batch_cls = 0, batch_reg = 0;

    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        // Fisher-Yates with the seeded stream
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1],
                    order[static_cast<std::size_t>(order_rng.uniform_int(
                        0, static_cast<int>(i) - 1))]);
        cursor = 0;
      }
      const ClipRef clip = clips[order[cursor++]];
      const Sequence& seq = dataset[static_cast<std::size_t>(clip.sequence)];

      Tensor carried;  // empty at t = 1
      Tensor clip_loss = Tensor::scalar(0.0);
      for (int i = 1; i < cfg.clip_length; ++i) {
        const Frame& prev = seq.frames[static_cast<std::size_t>(clip.start + i - 1)];
        const Frame& cur = seq.frames[static_cast<std::size_t>(clip.start + i)];

        // teacher forcing: template from the previous ground truth,
        // search reference jittered around it
        Box3D template_box = prev.gt;
        const PointCloud* template_cloud = &prev.cloud;
        if (mc.template_mode == TemplateMode::kFirst) {
          template_box = seq.frames[static_cast<std::size_t>(clip.start)].gt;
          template_cloud = &seq.frames[static_cast<std::size_t>(clip.start)].cloud;
        }
        const Box3D ref_box = jitter_box(prev.gt, cfg, jitter_rng);
        Model::FrameInput in = make_frame_input(
            *template_cloud, template_box, cur.cloud, ref_box, mc,
            jitter_rng.next_u64());
        if (mc.template_mode == TemplateMode::kMerged && clip.start + i - 1 > clip.start) {
          const Frame& first = seq.frames[static_cast<std::size_t>(clip.start)];
          RegionSample fregion =
              crop_region(first.cloud, first.gt, mc.template_enlarge, mc.n_template,
                          RegionKind::kTemplate, seq.seed);
          PointCloud merged = in.template_region.points;
          merged.points.insert(merged.points.end(), fregion.points.points.begin(),
                               fregion.points.points.end());
          RegionSample m;
          m.origin_box = in.template_region.origin_box;
          const auto idx = farthest_point_sample(merged, mc.n_template, 0);
          for (int id : idx)
            m.points.points.push_back(merged.points[static_cast<std::size_t>(id)]);
          in.template_region = std::move(m);
        }

        Model::FrameOutput out = model.forward_frame(in, carried);
        carried = out.temporal_out;  // stays on the tape within the clip

        const Box3D gt_canonical = box_in_canonical_frame(cur.gt, ref_box);
        LossBreakdown lb = compute_loss(out.head_out, out.search_centers, gt_canonical,
                                        cfg.lambda_cls, cfg.lambda_reg);
        Tensor frame_loss = lb.total;
        if (!out.aux_loss.empty())
          frame_loss = add(frame_loss, scale(out.aux_loss, mc.aux_coeff));
        clip_loss = add(clip_loss, frame_loss);
        batch_cls += lb.cls;
        batch_reg += lb.reg;
      }
      batch_loss = add(batch_loss, scale(clip_loss, 1.0 / (cfg.clip_length - 1)));
    }

    batch_loss = scale(batch_loss, 1.0 / cfg.batch_size);
    const double loss_value = batch_loss.data()[0];
    tape.backward(batch_loss);
    opt.step(model.parameters());

    const double denom = cfg.batch_size * (cfg.clip_length - 1);
    result.log.push_back({step, loss_value, batch_cls / denom, batch_reg / denom});
  }
  return result;
}

void write_loss_log(const TrainResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "step,loss,loss_cls,loss_reg\n";
  for (const auto& e : result.log)
    out << e.step << "," << e.loss << "," << e.cls << "," << e.reg << "\n";
}

}  // namespace pcsot
