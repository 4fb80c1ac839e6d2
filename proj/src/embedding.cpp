// SPDX-License-Identifier: Apache-2.0
#include "pcsot/embedding.hpp"

#include <algorithm>
#include <numeric>

namespace pcsot {

Neighborhoods group_points(const RegionSample& region, int g, int k) {
  const int n = static_cast<int>(region.points.size());
  if (g > n)
    throw ConfigError("group_points: group count " + std::to_string(g) +
                      " exceeds region size " + std::to_string(n));
  if (k < 1) throw ConfigError("group_points: k must be >= 1");

  Neighborhoods nb;
  nb.center_indices = farthest_point_sample(region.points, g, 0);
  const int kk = std::min(k, n);

  std::vector<double> rel(static_cast<std::size_t>(g) * k * 3);
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int gi = 0; gi < g; ++gi) {
    const Vec3 c = region.points.points[static_cast<std::size_t>(
        nb.center_indices[static_cast<std::size_t>(gi)])];
    nb.centers.push_back(c);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const Vec3 da = region.points.points[static_cast<std::size_t>(a)] - c;
      const Vec3 db = region.points.points[static_cast<std::size_t>(b)] - c;
      const double d2a = da.x * da.x + da.y * da.y + da.z * da.z;
      const double d2b = db.x * db.x + db.y * db.y + db.z * db.z;
      if (d2a != d2b) return d2a < d2b;
      return a < b;
    });
    for (int ki = 0; ki < k; ++ki) {
      // if k exceeds the region size, repeat the nearest points cyclically
      const Vec3 p =
          region.points.points[static_cast<std::size_t>(order[static_cast<std::size_t>(ki % kk)])] - c;
      const std::size_t off = ((static_cast<std::size_t>(gi) * k) + static_cast<std::size_t>(ki)) * 3;
      rel[off] = p.x;
      rel[off + 1] = p.y;
      rel[off + 2] = p.z;
    }
  }
  nb.rel_points = Tensor({g, k, 3}, std::move(rel));
  return nb;
}

Tensor patch_embed(const Neighborhoods& nb, const PatchEmbedParams& p) {
  const int g = nb.rel_points.dim(0);
  const int k = nb.rel_points.dim(1);
  const int d = p.w2.dim(1);
  Tensor flat = reshape(nb.rel_points, {g * k, 3});
  Tensor h = relu(add(matmul(flat, p.w1), p.b1));
  Tensor feat = add(matmul(h, p.w2), p.b2);
  return max_axis1(reshape(feat, {g, k, d}));
}

Tensor positional_embed(const std::vector<Vec3>& centers, const PosEmbedParams& p) {
  const int g = static_cast<int>(centers.size());
  std::vector<double> data(static_cast<std::size_t>(g) * 3);
  for (int i = 0; i < g; ++i) {
    data[static_cast<std::size_t>(i) * 3] = centers[static_cast<std::size_t>(i)].x;
    data[static_cast<std::size_t>(i) * 3 + 1] = centers[static_cast<std::size_t>(i)].y;
    data[static_cast<std::size_t>(i) * 3 + 2] = centers[static_cast<std::size_t>(i)].z;
  }
  Tensor c({g, 3}, std::move(data));
  Tensor h = gelu(add(matmul(c, p.w1), p.b1));
  return add(matmul(h, p.w2), p.b2);
}

TokenBatch embed_region(const RegionSample& region, int g, int k,
                        const PatchEmbedParams& patch, const PosEmbedParams& pos) {
  Neighborhoods nb = group_points(region, g, k);
  TokenBatch out;
  out.tokens = add(patch_embed(nb, patch), positional_embed(nb.centers, pos));
  out.centers = std::move(nb.centers);
  out.center_indices = std::move(nb.center_indices);
  return out;
}

}  // namespace pcsot
