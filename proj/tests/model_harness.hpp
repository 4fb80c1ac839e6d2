// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "pcsot/model.hpp"
#include "pcsot/synthdata.hpp"
#include "pcsot/train.hpp"

namespace testutil {

// Small, fast category for model-level tests.
inline pcsot::CategorySpec tiny_spec() {
  pcsot::CategorySpec spec;
  spec.name = "tiny";
  spec.shape = pcsot::ShapeKind::kCuboidShell;
  spec.motion = pcsot::MotionKind::kConstantVelocity;
  spec.w_min = 1.6;
  spec.w_max = 2.2;
  spec.l_min = 0.9;
  spec.l_max = 1.2;
  spec.h_min = 0.9;
  spec.h_max = 1.2;
  spec.speed_min = 0.2;
  spec.speed_max = 0.4;
  spec.density = 28;
  spec.dropout = 0.05;
  spec.noise_sigma = 0.01;
  spec.clutter_points = 8;
  return spec;
}

inline std::vector<pcsot::Sequence> tiny_dataset(int n_sequences, int length,
                                                 std::uint64_t seed) {
  std::vector<pcsot::Sequence> out;
  const pcsot::CategorySpec spec = tiny_spec();
  for (int i = 0; i < n_sequences; ++i) {
    pcsot::Sequence s = pcsot::generate_sequence(
        spec, length, seed + static_cast<std::uint64_t>(i) * 7919);
    s.name = "tiny_" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

// Deterministic 3-frame teacher-forced clip loss over one sequence; the
// returned callable rebuilds the graph from current parameter values, so
// it can drive finite-difference checks end to end. The optional sink
// observes every expert-routing decision of the forward passes.
inline std::function<pcsot::Tensor()> clip_loss_builder(
    const pcsot::Model& model, const pcsot::Sequence& seq, int clip_length = 3,
    pcsot::ExpertUsageSink* sink = nullptr) {
  return [&model, &seq, clip_length, sink]() {
    using namespace pcsot;
    const ModelConfig& mc = model.config();
    Tensor carried;
    Tensor total = Tensor::scalar(0.0);
    for (int i = 1; i < clip_length; ++i) {
      const Frame& prev = seq.frames[static_cast<std::size_t>(i - 1)];
      const Frame& cur = seq.frames[static_cast<std::size_t>(i)];
      Model::FrameInput in = make_frame_input(prev.cloud, prev.gt, cur.cloud,
                                              prev.gt, mc, 17);
      Model::FrameOutput out = model.forward_frame(in, carried, sink);
      carried = out.temporal_out;
      const Box3D gt_canonical = box_in_canonical_frame(cur.gt, prev.gt);
      total = add(total,
                  compute_loss(out.head_out, out.search_centers, gt_canonical, 1.0, 1.0)
                      .total);
    }
    return scale(total, 1.0 / (clip_length - 1));
  };
}

// Every tunable parameter of a model, for gradient sweeps.
inline std::vector<pcsot::Tensor> tunable_tensors(pcsot::Model& model) {
  std::vector<pcsot::Tensor> out;
  for (auto& p : model.parameters())
    if (!p.frozen) out.push_back(p.value);
  return out;
}

}  // namespace testutil
