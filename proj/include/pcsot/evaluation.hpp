// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "pcsot/model.hpp"
#include "pcsot/synthdata.hpp"

namespace pcsot {

// Per-sequence mutable inference state.
struct TrackerState {
  Box3D current_box;
  RegionSample template_region;
  Tensor carried;  // empty at t = 1
  int frame_index = 1;
};

// Single-object tracker over one sequence: initialized from the first
// frame's ground-truth box, then driven purely by its own predictions.
class Tracker {
 public:
  explicit Tracker(const Model& model) : model_(model) {}

  void reset(const PointCloud& first_frame, const Box3D& init_box);
  Prediction step(const PointCloud& frame, ExpertUsageSink* sink = nullptr);
  const TrackerState& state() const { return state_; }

 private:
  void refresh_template(const PointCloud& cloud, const Box3D& box);

  const Model& model_;
  TrackerState state_;
  RegionSample first_template_;
  PointCloud prev_cloud_;
  std::uint64_t crop_seed_ = 0;
};

// Test doubles for harness self-checks; the normal path never sees ground
// truth beyond the first frame.
struct TrackOptions {
  enum class Double { kNone, kOracle, kIdentity };
  Double test_double = Double::kNone;
  const std::vector<Box3D>* oracle_boxes = nullptr;  // per frame, used by kOracle
};

// One prediction per frame after the first.
std::vector<Prediction> track_sequence(const Model& model,
                                       const std::vector<PointCloud>& frames,
                                       const Box3D& init_box,
                                       ExpertUsageSink* sink = nullptr,
                                       const TrackOptions& opts = {});

// One-pass metrics scaled to 0..100. Success is the IoU-threshold AUC in
// closed form (mean IoU); Precision is the trapezoidal distance-threshold
// AUC over 201 thresholds spanning [0, 2] meters.
double success_metric(const std::vector<double>& ious);
double precision_metric(const std::vector<double>& dists);

// gate-mass accumulation per (category, layer, expert)
class ExpertUsageAccum : public ExpertUsageSink {
 public:
  void set_category(const std::string& cat) { category_ = cat; }
  void add(int layer, int expert, double gate) override;
  // category -> layer -> expert -> fraction (rows normalized to 1)
  std::map<std::string, std::map<int, std::vector<double>>> fractions() const;
  void merge(const ExpertUsageAccum& other);

 private:
  std::string category_;
  std::map<std::string, std::map<int, std::vector<double>>> sums_;
};

struct CategoryScore {
  double success = 0;
  double precision = 0;
  int sequences = 0;
};

struct SequenceResult {
  std::string category, name;
  std::vector<double> iou;
  std::vector<double> center_dist;
};

struct EvalReport {
  std::map<std::string, CategoryScore> per_category;
  double mean_success = 0;
  double mean_precision = 0;
  std::vector<SequenceResult> per_sequence;
  std::map<std::string, std::map<int, std::vector<double>>> expert_activation;
};

struct EvalOptions {
  TrackOptions track;
  int jobs = 1;
};

EvalReport evaluate(const Model& model, const std::vector<Sequence>& dataset,
                    const EvalOptions& opts = {});

std::string report_to_json(const EvalReport& report);
// CSV rows "category,layer,expert,fraction"
std::string histogram_to_csv(
    const std::map<std::string, std::map<int, std::vector<double>>>& hist);

// Reference anchors. The static box repeats the first-frame ground truth;
// the constant-velocity anchor is initialized from the first two
// ground-truth boxes and then extrapolates its own last displacement.
std::vector<Prediction> static_box_baseline(const Box3D& init_box, int n_predictions);
std::vector<Prediction> constant_velocity_baseline(const Box3D& gt1, const Box3D& gt2,
                                                   int n_predictions);

// Success/Precision of a prediction list against ground truth (frames
// after the first).
CategoryScore score_sequence(const std::vector<Prediction>& preds,
                             const Sequence& seq, SequenceResult* detail = nullptr);

}  // namespace pcsot
