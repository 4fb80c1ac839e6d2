// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pcsot/common.hpp"

namespace pcsot {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a.x + b.x, a.y + b.y, a.z + b.z};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}
inline Vec3 operator*(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }

// Map angle into [-pi, pi).
double normalize_angle(double a);

// Oriented 3-D box. Axis convention in the box's local frame:
//   x: extent w (the heading direction), y: extent l, z: extent h.
// yaw rotates the local frame about the world z axis.
struct Box3D {
  Vec3 center;
  double yaw = 0;
  double w = 1, l = 1, h = 1;

  Box3D() = default;
  Box3D(Vec3 c, double yaw_, double w_, double l_, double h_);

  double volume() const { return w * l * h; }
};

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

enum class RegionKind { kTemplate, kSearch };

// A fixed-size crop in the canonical frame of `origin_box` (recentred on
// the box center, de-rotated by its yaw).
struct RegionSample {
  PointCloud points;         // exactly the configured point count
  std::vector<double> mask;  // per point, filled by build_masks
  Box3D origin_box;
  bool degenerate = false;  // crop had zero survivors; points are origin copies
};

// world -> box-local coordinates
Vec3 to_box_frame(const Vec3& p, const Box3D& box);
// box-local -> world coordinates
Vec3 from_box_frame(const Vec3& p, const Box3D& box);

// Greedy max-min-distance subset. First pick is seed_index; ties go to the
// lowest point index. If the cloud has fewer than n points the selection
// order repeats cyclically.
std::vector<int> farthest_point_sample(const PointCloud& pc, int n, int seed_index);

// Inclusive containment test (boundary points count as inside).
std::vector<bool> points_in_box(const PointCloud& pc, const Box3D& box);
bool point_in_box(const Vec3& p, const Box3D& box);

// Crop a region around `box`, enlarged by `enlarge` meters per side on w
// and l in BEV. Template crops also bound z by h/2; search crops keep all
// z. Output is canonicalized to the box frame and resampled to exactly
// n_out points. Zero survivors produce n_out origin points and set the
// degenerate flag. rng_seed picks the FPS seed point.
RegionSample crop_region(const PointCloud& pc, const Box3D& box, double enlarge,
                         int n_out, RegionKind kind, std::uint64_t rng_seed);

// Foreground/background mask values per region point. `region` must be in
// the canonical frame of prev_box. Template: fg for points inside
// prev_box, bg otherwise. Search: constant uniform value.
std::vector<double> build_masks(const RegionSample& region, const Box3D& prev_box,
                                RegionKind kind, double fg = 0.8, double bg = 0.2,
                                double uniform = 0.5);

// Move a box by an offset expressed in its canonical frame, then rotate
// yaw by offset[3]. Sizes are unchanged.
Box3D apply_box_offset(const Box3D& box, const std::array<double, 4>& offset);

// Express `box` in the canonical frame of `ref` (inverse of
// apply_box_offset on the pose part).
Box3D box_in_canonical_frame(const Box3D& box, const Box3D& ref);

// Exact rotated-box IoU: BEV polygon clipping times vertical overlap over
// union of volumes. Symmetric in its arguments.
double iou3d(const Box3D& a, const Box3D& b);

}  // namespace pcsot
