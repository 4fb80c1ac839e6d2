// SPDX-License-Identifier: Apache-2.0
#include "pcsot/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "pcsot/rng.hpp"

namespace pcsot {

double normalize_angle(double a) {
  const double two_pi = 6.283185307179586476925286766559;
  double y = std::fmod(a + 3.14159265358979323846, two_pi);
  if (y < 0) y += two_pi;
  return y - 3.14159265358979323846;
}

Box3D::Box3D(Vec3 c, double yaw_, double w_, double l_, double h_)
    : center(c), yaw(normalize_angle(yaw_)), w(w_), l(l_), h(h_) {
  if (!(w > 0 && l > 0 && h > 0))
    throw ContractError("Box3D: sizes must be positive");
}

Vec3 to_box_frame(const Vec3& p, const Box3D& box) {
  const double c = std::cos(-box.yaw), s = std::sin(-box.yaw);
  const Vec3 d = p - box.center;
  return {d.x * c - d.y * s, d.x * s + d.y * c, d.z};
}

Vec3 from_box_frame(const Vec3& p, const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  return {p.x * c - p.y * s + box.center.x, p.x * s + p.y * c + box.center.y,
          p.z + box.center.z};
}

std::vector<int> farthest_point_sample(const PointCloud& pc, int n, int seed_index) {
  const int count = static_cast<int>(pc.size());
  if (count == 0) throw EmptyInputError("farthest_point_sample: empty cloud");
  if (n < 1) throw ContractError("farthest_point_sample: n must be >= 1");
  if (seed_index < 0 || seed_index >= count)
    throw ContractError("farthest_point_sample: seed index out of range");

  const int unique = std::min(n, count);
  std::vector<int> picked;
  picked.reserve(static_cast<std::size_t>(n));
  picked.push_back(seed_index);
  std::vector<double> min_d2(static_cast<std::size_t>(count),
                             std::numeric_limits<double>::infinity());
  int last = seed_index;
  while (static_cast<int>(picked.size()) < unique) {
    double best = -1.0;
    int best_i = -1;
    for (int i = 0; i < count; ++i) {
      const Vec3 d = pc.points[static_cast<std::size_t>(i)] -
                     pc.points[static_cast<std::size_t>(last)];
      const double d2 = d.x * d.x + d.y * d.y + d.z * d.z;
      auto& md = min_d2[static_cast<std::size_t>(i)];
      md = std::min(md, d2);
      if (md > best) {  // strict: ties keep the lowest index
        best = md;
        best_i = i;
      }
    }
    picked.push_back(best_i);
    last = best_i;
  }
  // pad by cyclic repetition of the selection order
  for (int i = unique; i < n; ++i)
    picked.push_back(picked[static_cast<std::size_t>(i % unique)]);
  return picked;
}

bool point_in_box(const Vec3& p, const Box3D& box) {
  const Vec3 q = to_box_frame(p, box);
  return std::abs(q.x) <= box.w / 2 && std::abs(q.y) <= box.l / 2 &&
         std::abs(q.z) <= box.h / 2;
}

std::vector<bool> points_in_box(const PointCloud& pc, const Box3D& box) {
  std::vector<bool> out(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i)
    out[i] = point_in_box(pc.points[i], box);
  return out;
}

RegionSample crop_region(const PointCloud& pc, const Box3D& box, double enlarge,
                         int n_out, RegionKind kind, std::uint64_t rng_seed) {
  if (n_out < 1) throw ContractError("crop_region: n_out must be >= 1");
  RegionSample out;
  out.origin_box = box;

  const double half_w = box.w / 2 + enlarge;
  const double half_l = box.l / 2 + enlarge;
  PointCloud survivors;
  for (const Vec3& p : pc.points) {
    const Vec3 q = to_box_frame(p, box);
    if (std::abs(q.x) > half_w || std::abs(q.y) > half_l) continue;
    if (kind == RegionKind::kTemplate && std::abs(q.z) > box.h / 2) continue;
    survivors.points.push_back(q);
  }
  if (survivors.empty()) {
    out.points.points.assign(static_cast<std::size_t>(n_out), Vec3{});
    out.degenerate = true;
    return out;
  }
  const int seed =
      static_cast<int>(rng_seed % static_cast<std::uint64_t>(survivors.size()));
  const std::vector<int> idx = farthest_point_sample(survivors, n_out, seed);
  out.points.points.reserve(static_cast<std::size_t>(n_out));
  for (int i : idx) out.points.points.push_back(survivors.points[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<double> build_masks(const RegionSample& region, const Box3D& prev_box,
                                RegionKind kind, double fg, double bg,
                                double uniform) {
  std::vector<double> mask(region.points.size());
  if (kind == RegionKind::kSearch) {
    std::fill(mask.begin(), mask.end(), uniform);
    return mask;
  }
  // region points live in the canonical frame of prev_box
  const Box3D local({0, 0, 0}, 0.0, prev_box.w, prev_box.l, prev_box.h);
  for (std::size_t i = 0; i < region.points.size(); ++i)
    mask[i] = point_in_box(region.points.points[i], local) ? fg : bg;
  return mask;
}

Box3D apply_box_offset(const Box3D& box, const std::array<double, 4>& offset) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  Vec3 center = box.center;
  center.x += offset[0] * c - offset[1] * s;
  center.y += offset[0] * s + offset[1] * c;
  center.z += offset[2];
  return Box3D(center, box.yaw + offset[3], box.w, box.l, box.h);
}

Box3D box_in_canonical_frame(const Box3D& box, const Box3D& ref) {
  const Vec3 local = to_box_frame(box.center, ref);
  return Box3D(local, box.yaw - ref.yaw, box.w, box.l, box.h);
}

// ---- rotated IoU ------------------------------------------------------------

namespace {

struct Pt2 {
  double x, y;
};

// CCW corners of the BEV rectangle of a box.
std::array<Pt2, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hw = b.w / 2, hl = b.l / 2;
  const std::array<Pt2, 4> local = {Pt2{hw, hl}, Pt2{-hw, hl}, Pt2{-hw, -hl},
                                    Pt2{hw, -hl}};
  std::array<Pt2, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {local[i].x * c - local[i].y * s + b.center.x,
              local[i].x * s + local[i].y * c + b.center.y};
  }
  return out;
}

double cross2(const Pt2& o, const Pt2& a, const Pt2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Sutherland-Hodgman: clip convex `subject` by the CCW convex `clip`.
std::vector<Pt2> clip_polygon(std::vector<Pt2> subject, const std::array<Pt2, 4>& clip) {
  for (std::size_t e = 0; e < 4 && !subject.empty(); ++e) {
    const Pt2& a = clip[e];
    const Pt2& b = clip[(e + 1) % 4];
    std::vector<Pt2> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Pt2& p = subject[i];
      const Pt2& q = subject[(i + 1) % subject.size()];
      const double dp = cross2(a, b, p);
      const double dq = cross2(a, b, q);
      if (dp >= 0) out.push_back(p);
      if ((dp > 0 && dq < 0) || (dp < 0 && dq > 0)) {
        const double t = dp / (dp - dq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    subject = std::move(out);
  }
  return subject;
}

double polygon_area(const std::vector<Pt2>& poly) {
  if (poly.size() < 3) return 0.0;
  double acc = 0;
  for (std::size_t i = 1; i + 1 < poly.size(); ++i)
    acc += cross2(poly[0], poly[i], poly[i + 1]);
  return std::abs(acc) / 2;
}

std::tuple<double, double, double, double, double, double, double> box_key(
    const Box3D& b) {
  return {b.center.x, b.center.y, b.center.z, b.yaw, b.w, b.l, b.h};
}

}  // namespace

double iou3d(const Box3D& a, const Box3D& b) {
  // canonical argument order makes the float computation symmetric
  if (box_key(b) < box_key(a)) return iou3d(b, a);

  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  std::vector<Pt2> subject(ca.begin(), ca.end());
  const double bev = polygon_area(clip_polygon(std::move(subject), cb));

  const double za0 = a.center.z - a.h / 2, za1 = a.center.z + a.h / 2;
  const double zb0 = b.center.z - b.h / 2, zb1 = b.center.z + b.h / 2;
  const double dz = std::max(0.0, std::min(za1, zb1) - std::max(za0, zb0));

  const double inter = bev * dz;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace pcsot
