// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "pcsot/model.hpp"
#include "pcsot/synthdata.hpp"

namespace pcsot {

struct TrainConfig {
  int clip_length = 3;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int steps = 1200;
  int batch_size = 4;
  double lambda_cls = 1.0;
  double lambda_reg = 1.0;
  int warmup_steps = 40;
  // teacher-forcing jitter applied to the search reference box
  double jitter_xy = 0.12;
  double jitter_z = 0.03;
  double jitter_yaw = 0.03;
  std::uint64_t seed = 7;

  void validate() const;
};

struct LossBreakdown {
  Tensor total;    // scalar, on the active tape
  double cls = 0;  // plain values for logging
  double reg = 0;
};

// Classification: BCE on per-token logits, label 1 iff the token center
// lies inside the canonical ground-truth box. Regression: Huber(delta=1)
// on (dx, dy, dz, dyaw) of positive tokens toward (gt_center - center_i,
// gt_yaw). With no positive tokens the regression term is zero.
LossBreakdown compute_loss(const Tensor& head_out, const std::vector<Vec3>& centers,
                           const Box3D& gt_canonical, double lambda_cls,
                           double lambda_reg);

// Decoupled-weight-decay adaptive-moments optimizer over the tunable
// parameters of a model. Deterministic given its state.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  // Applies one update from the accumulated grads, then clears them.
  void step(std::vector<Parameter>& params);
  int steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  TrainConfig cfg_;
  std::vector<Moments> state_;
  int t_ = 0;
};

struct TrainLogEntry {
  int step = 0;
  double loss = 0, cls = 0, reg = 0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
};

// Seeded-shuffled clip sampling over the dataset; one optimizer step per
// batch of clips; temporal token backpropagated through the clip and
// detached at clip boundaries. Frozen parameters are byte-identical at
// exit.
TrainResult train(const std::vector<Sequence>& dataset, Model& model,
                  const TrainConfig& cfg);

void write_loss_log(const TrainResult& result, const std::string& path);

}  // namespace pcsot
