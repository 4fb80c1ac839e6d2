// SPDX-License-Identifier: Apache-2.0
#include "pcsot/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace pcsot {

void Tracker::refresh_template(const PointCloud& cloud, const Box3D& box) {
  const ModelConfig& cfg = model_.config();
  RegionSample region = crop_region(cloud, box, cfg.template_enlarge, cfg.n_template,
                                    RegionKind::kTemplate, crop_seed_++);
  if (cfg.template_mode == TemplateMode::kMerged && !first_template_.points.empty()) {
    PointCloud merged = region.points;
    merged.points.insert(merged.points.end(), first_template_.points.points.begin(),
                         first_template_.points.points.end());
    RegionSample m;
    m.origin_box = region.origin_box;
    m.degenerate = region.degenerate && first_template_.degenerate;
    const auto idx = farthest_point_sample(merged, cfg.n_template, 0);
    for (int id : idx) m.points.points.push_back(merged.points[static_cast<std::size_t>(id)]);
    region = std::move(m);
  }
  state_.template_region = std::move(region);
}

void Tracker::reset(const PointCloud& first_frame, const Box3D& init_box) {
  const ModelConfig& cfg = model_.config();
  crop_seed_ = 0;
  state_ = TrackerState{};
  state_.current_box = init_box;
  state_.frame_index = 1;
  state_.carried = Tensor{};
  first_template_ = crop_region(first_frame, init_box, cfg.template_enlarge,
                                cfg.n_template, RegionKind::kTemplate, crop_seed_++);
  state_.template_region = first_template_;
  prev_cloud_ = first_frame;
}

Prediction Tracker::step(const PointCloud& frame, ExpertUsageSink* sink) {
  const ModelConfig& cfg = model_.config();
  Model::FrameInput in;
  in.template_region = state_.template_region;
  in.search_region = crop_region(frame, state_.current_box, cfg.search_enlarge,
                                 cfg.n_search, RegionKind::kSearch, crop_seed_++);

  Prediction pred;
  if (in.search_region.degenerate) {
    // nothing to localize against; hold the previous box
    pred.box = state_.current_box;
    pred.confidence = 0.0;
  } else {
    Model::FrameOutput out = model_.forward_frame(in, state_.carried, sink);
    pred = localize(out.head_out, out.search_centers, state_.current_box);
    if (cfg.use_temporal_token) state_.carried = out.temporal_out.detach();
  }

  state_.current_box = pred.box;
  ++state_.frame_index;
  if (cfg.template_mode != TemplateMode::kFirst) refresh_template(frame, pred.box);
  prev_cloud_ = frame;
  return pred;
}

std::vector<Prediction> track_sequence(const Model& model,
                                       const std::vector<PointCloud>& frames,
                                       const Box3D& init_box, ExpertUsageSink* sink,
                                       const TrackOptions& opts) {
  if (frames.size() < 2) throw EmptyInputError("track_sequence: need >= 2 frames");
  std::vector<Prediction> preds;
  if (opts.test_double == TrackOptions::Double::kOracle) {
    if (!opts.oracle_boxes || opts.oracle_boxes->size() != frames.size())
      throw ContractError("track_sequence: oracle double needs one box per frame");
    for (std::size_t t = 1; t < frames.size(); ++t)
      preds.push_back({(*opts.oracle_boxes)[t], 1.0});
    return preds;
  }
  if (opts.test_double == TrackOptions::Double::kIdentity) {
    for (std::size_t t = 1; t < frames.size(); ++t) preds.push_back({init_box, 1.0});
    return preds;
  }
  Tracker tracker(model);
  tracker.reset(frames[0], init_box);
  for (std::size_t t = 1; t < frames.size(); ++t)
    preds.push_back(tracker.step(frames[t], sink));
  return preds;
}

double success_metric(const std::vector<double>& ious) {
  if (ious.empty()) throw EmptyInputError("success_metric: empty list");
  double acc = 0;
  for (double v : ious) acc += std::clamp(v, 0.0, 1.0);
  return 100.0 * acc / static_cast<double>(ious.size());
}

double precision_metric(const std::vector<double>& dists) {
  if (dists.empty()) throw EmptyInputError("precision_metric: empty list");
  // fraction(dist <= tau) on 201 uniform thresholds over [0, 2] m,
  // integrated with the trapezoid rule and normalized by the 2 m span
  const int kThresholds = 201;
  const double kMaxDist = 2.0;
  std::vector<double> frac(kThresholds);
  for (int i = 0; i < kThresholds; ++i) {
    const double tau = kMaxDist * i / (kThresholds - 1);
    int count = 0;
    for (double d : dists) count += d <= tau;
    frac[static_cast<std::size_t>(i)] = static_cast<double>(count) / dists.size();
  }
  double integral = 0;
  const double dt = kMaxDist / (kThresholds - 1);
  for (int i = 0; i + 1 < kThresholds; ++i)
    integral += 0.5 * (frac[static_cast<std::size_t>(i)] + frac[static_cast<std::size_t>(i) + 1]) * dt;
  return 100.0 * integral / kMaxDist;
}

void ExpertUsageAccum::add(int layer, int expert, double gate) {
  auto& row = sums_[category_][layer];
  if (static_cast<int>(row.size()) <= expert) row.resize(static_cast<std::size_t>(expert) + 1, 0.0);
  row[static_cast<std::size_t>(expert)] += gate;
}

std::map<std::string, std::map<int, std::vector<double>>> ExpertUsageAccum::fractions()
    const {
  auto out = sums_;
  for (auto& [cat, layers] : out) {
    for (auto& [layer, row] : layers) {
      double total = 0;
      for (double v : row) total += v;
      if (total > 0)
        for (double& v : row) v /= total;
    }
  }
  return out;
}

void ExpertUsageAccum::merge(const ExpertUsageAccum& other) {
  for (const auto& [cat, layers] : other.sums_) {
    for (const auto& [layer, row] : layers) {
      auto& dst = sums_[cat][layer];
      if (dst.size() < row.size()) dst.resize(row.size(), 0.0);
      for (std::size_t e = 0; e < row.size(); ++e) dst[e] += row[e];
    }
  }
}

CategoryScore score_sequence(const std::vector<Prediction>& preds, const Sequence& seq,
                             SequenceResult* detail) {
  if (preds.size() + 1 != seq.frames.size())
    throw ContractError("score_sequence: prediction count mismatch");
  std::vector<double> ious, dists;
  for (std::size_t t = 1; t < seq.frames.size(); ++t) {
    const Box3D& gt = seq.frames[t].gt;
    const Box3D& pred = preds[t - 1].box;
    ious.push_back(iou3d(pred, gt));
    const Vec3 d = pred.center - gt.center;
    dists.push_back(std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z));
  }
  if (detail) {
    detail->category = seq.category;
    detail->name = seq.name;
    detail->iou = ious;
    detail->center_dist = dists;
  }
  CategoryScore score;
  score.success = success_metric(ious);
  score.precision = precision_metric(dists);
  score.sequences = 1;
  return score;
}

EvalReport evaluate(const Model& model, const std::vector<Sequence>& dataset,
                    const EvalOptions& opts) {
  if (dataset.empty()) throw EmptyInputError("evaluate: empty dataset");

  struct PerSeq {
    CategoryScore score;
    SequenceResult detail;
    ExpertUsageAccum usage;
  };
  std::vector<PerSeq> rows(dataset.size());

  auto run_one = [&](std::size_t i) {
    const Sequence& seq = dataset[i];
    rows[i].usage.set_category(seq.category);
    std::vector<PointCloud> frames;
    for (const Frame& f : seq.frames) frames.push_back(f.cloud);
    std::vector<Box3D> gt_boxes;
    for (const Frame& f : seq.frames) gt_boxes.push_back(f.gt);
    TrackOptions topts = opts.track;
    if (topts.test_double == TrackOptions::Double::kOracle)
      topts.oracle_boxes = &gt_boxes;
    const auto preds = track_sequence(model, frames, seq.frames[0].gt,
                                      &rows[i].usage, topts);
    rows[i].score = score_sequence(preds, seq, &rows[i].detail);
  };

  const int jobs = std::max(1, opts.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < dataset.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int j = 0; j < jobs; ++j)
      pool.emplace_back([&]() {
        for (std::size_t i = next.fetch_add(1); i < dataset.size();
             i = next.fetch_add(1))
          run_one(i);
      });
    for (auto& th : pool) th.join();
  }

  // deterministic reduction in dataset order
  EvalReport report;
  ExpertUsageAccum usage;
  std::map<std::string, std::pair<double, double>> cat_sums;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    auto& score = report.per_category[r.detail.category];
    score.success += r.score.success;
    score.precision += r.score.precision;
    score.sequences += 1;
    report.per_sequence.push_back(r.detail);
    usage.merge(r.usage);
  }
  double total_s = 0, total_p = 0;
  int total_n = 0;
  for (auto& [cat, score] : report.per_category) {
    total_s += score.success;
    total_p += score.precision;
    total_n += score.sequences;
    score.success /= score.sequences;
    score.precision /= score.sequences;
  }
  report.mean_success = total_s / total_n;
  report.mean_precision = total_p / total_n;
  report.expert_activation = usage.fractions();
  return report;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["mean"]["success"] = report.mean_success;
  j["mean"]["precision"] = report.mean_precision;
  for (const auto& [cat, score] : report.per_category) {
    j["per_category"][cat] = {{"success", score.success},
                              {"precision", score.precision},
                              {"sequences", score.sequences}};
  }
  j["per_sequence"] = nlohmann::json::array();
  for (const auto& s : report.per_sequence) {
    j["per_sequence"].push_back({{"category", s.category},
                                 {"name", s.name},
                                 {"iou", s.iou},
                                 {"center_dist", s.center_dist}});
  }
  for (const auto& [cat, layers] : report.expert_activation) {
    nlohmann::json cat_j;
    for (const auto& [layer, row] : layers) cat_j[std::to_string(layer)] = row;
    j["expert_activation"][cat] = cat_j;
  }
  return j.dump(2);
}

std::string histogram_to_csv(
    const std::map<std::string, std::map<int, std::vector<double>>>& hist) {
  std::ostringstream out;
  out << "category,layer,expert,fraction\n";
  out.precision(17);
  for (const auto& [cat, layers] : hist)
    for (const auto& [layer, row] : layers)
      for (std::size_t e = 0; e < row.size(); ++e)
        out << cat << "," << layer << "," << e << "," << row[e] << "\n";
  return out.str();
}

std::vector<Prediction> static_box_baseline(const Box3D& init_box, int n_predictions) {
  std::vector<Prediction> out;
  for (int i = 0; i < n_predictions; ++i) out.push_back({init_box, 1.0});
  return out;
}

std::vector<Prediction> constant_velocity_baseline(const Box3D& gt1, const Box3D& gt2,
                                                   int n_predictions) {
  std::vector<Prediction> out;
  if (n_predictions < 1) return out;
  out.push_back({gt2, 1.0});
  Box3D prev2 = gt1, prev1 = gt2;
  for (int i = 1; i < n_predictions; ++i) {
    const Vec3 v = prev1.center - prev2.center;
    const double dyaw = normalize_angle(prev1.yaw - prev2.yaw);
    Box3D next(prev1.center + v, prev1.yaw + dyaw, prev1.w, prev1.l, prev1.h);
    out.push_back({next, 1.0});
    prev2 = prev1;
    prev1 = next;
  }
  return out;
}

}  // namespace pcsot
