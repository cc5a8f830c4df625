#include <algorithm>
#include <cmath>
#include <numeric>

#include "orchardsim/error.hpp"
#include "orchardsim/vls.hpp"

namespace orchard {

namespace {

constexpr int kBins = 12;
constexpr std::size_t kLeafSize = 4;
constexpr double kBoxPad = 1e-7;  // meters; keeps box culling conservative
constexpr int kMaxSahDepth = 64;

struct BuildRef {
  Aabb bounds;
  Vec3 centroid;
  std::uint32_t prim;
};

class Builder {
 public:
  Builder(const std::vector<Vec3>& vertices, const std::vector<std::array<std::uint32_t, 3>>& tris,
          std::vector<Bvh::Node>& nodes, std::vector<simd::TriPacket4>& packets)
      : vertices_(vertices), tris_(tris), nodes_(nodes), packets_(packets) {
    refs_.reserve(tris.size());
    for (std::uint32_t i = 0; i < tris.size(); ++i) {
      BuildRef r;
      for (int k = 0; k < 3; ++k) r.bounds.expand(vertices[tris[i][static_cast<std::size_t>(k)]]);
      r.centroid = r.bounds.center();
      r.prim = i;
      refs_.push_back(r);
    }
  }

  void run() {
    nodes_.clear();
    packets_.clear();
    if (refs_.empty()) return;
    nodes_.reserve(2 * refs_.size() / kLeafSize + 2);
    build(0, refs_.size(), 0);
  }

 private:
  std::uint32_t build(std::size_t begin, std::size_t end, int depth) {
    const auto index = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    Aabb bounds;
    Aabb centroids;
    for (std::size_t i = begin; i < end; ++i) {
      bounds.expand(refs_[i].bounds);
      centroids.expand(refs_[i].centroid);
    }
    bounds.lo -= Vec3{kBoxPad, kBoxPad, kBoxPad};
    bounds.hi += Vec3{kBoxPad, kBoxPad, kBoxPad};

    if (end - begin <= kLeafSize) {
      Bvh::Node& leaf = nodes_[index];
      leaf.bounds = bounds;
      leaf.first = static_cast<std::uint32_t>(packets_.size());
      leaf.count = 1;
      packets_.push_back(make_packet(begin, end));
      return index;
    }

    // Past kMaxSahDepth only median splits, which bounds the traversal stack.
    const std::size_t mid = depth < kMaxSahDepth ? partition(begin, end, centroids) : begin + (end - begin) / 2;
    const std::uint32_t left = build(begin, mid, depth + 1);
    const std::uint32_t right = build(mid, end, depth + 1);
    Bvh::Node& node = nodes_[index];
    node.bounds = bounds;
    node.first = left;
    node.right = right;
    node.count = 0;
    const Vec3 ext = centroids.extent();
    node.axis = static_cast<std::uint8_t>(ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2));
    return index;
  }

  // Binned SAH split; falls back to an index median for degenerate spreads.
  std::size_t partition(std::size_t begin, std::size_t end, const Aabb& centroids) {
    double best_cost = INFINITY;
    int best_axis = -1;
    int best_bin = 0;
    for (int axis = 0; axis < 3; ++axis) {
      const double lo = centroids.lo[axis];
      const double extent = centroids.hi[axis] - lo;
      if (!(extent > 0.0)) continue;
      Aabb bin_bounds[kBins];
      std::size_t bin_count[kBins] = {};
      const double scale = kBins / extent;
      for (std::size_t i = begin; i < end; ++i) {
        const int b = std::min(kBins - 1, static_cast<int>((refs_[i].centroid[axis] - lo) * scale));
        bin_bounds[b].expand(refs_[i].bounds);
        ++bin_count[b];
      }
      double right_area[kBins];
      std::size_t right_count[kBins];
      Aabb acc;
      std::size_t cnt = 0;
      for (int b = kBins - 1; b > 0; --b) {
        acc.expand(bin_bounds[b]);
        cnt += bin_count[b];
        right_area[b] = acc.surface_area();
        right_count[b] = cnt;
      }
      acc = Aabb{};
      cnt = 0;
      for (int b = 0; b + 1 < kBins; ++b) {
        acc.expand(bin_bounds[b]);
        cnt += bin_count[b];
        if (cnt == 0 || right_count[b + 1] == 0) continue;
        const double cost = acc.surface_area() * static_cast<double>(cnt) +
                            right_area[b + 1] * static_cast<double>(right_count[b + 1]);
        if (cost < best_cost) {
          best_cost = cost;
          best_axis = axis;
          best_bin = b;
        }
      }
    }
    if (best_axis >= 0) {
      const double lo = centroids.lo[best_axis];
      const double scale = kBins / (centroids.hi[best_axis] - lo);
      auto it = std::partition(refs_.begin() + static_cast<std::ptrdiff_t>(begin),
                               refs_.begin() + static_cast<std::ptrdiff_t>(end), [&](const BuildRef& r) {
                                 const int b = std::min(kBins - 1, static_cast<int>((r.centroid[best_axis] - lo) * scale));
                                 return b <= best_bin;
                               });
      const auto mid = static_cast<std::size_t>(it - refs_.begin());
      if (mid > begin && mid < end) return mid;
    }
    return begin + (end - begin) / 2;
  }

  simd::TriPacket4 make_packet(std::size_t begin, std::size_t end) const {
    simd::TriPacket4 p{};
    for (int k = 0; k < 4; ++k) p.prim[k] = simd::kInvalidPrim;
    for (std::size_t i = begin; i < end; ++i) {
      const int k = static_cast<int>(i - begin);
      const auto& t = tris_[refs_[i].prim];
      const Vec3& v0 = vertices_[t[0]];
      const Vec3& v1 = vertices_[t[1]];
      const Vec3& v2 = vertices_[t[2]];
      p.v0x[k] = v0.x;
      p.v0y[k] = v0.y;
      p.v0z[k] = v0.z;
      p.e1x[k] = v1.x - v0.x;
      p.e1y[k] = v1.y - v0.y;
      p.e1z[k] = v1.z - v0.z;
      p.e2x[k] = v2.x - v0.x;
      p.e2y[k] = v2.y - v0.y;
      p.e2z[k] = v2.z - v0.z;
      p.prim[k] = refs_[i].prim;
    }
    return p;
  }

  const std::vector<Vec3>& vertices_;
  const std::vector<std::array<std::uint32_t, 3>>& tris_;
  std::vector<Bvh::Node>& nodes_;
  std::vector<simd::TriPacket4>& packets_;
  std::vector<BuildRef> refs_;
};

struct RaySlab {
  double o[3];
  double inv[3];
  bool parallel[3];
};

// Entry distance of the ray into `b`, or +inf if it misses within [0, t_max].
inline double box_entry(const Aabb& b, const RaySlab& r, double t_max) {
  double t_near = 0.0;
  double t_far = t_max;
  for (int a = 0; a < 3; ++a) {
    const double lo = b.lo[a];
    const double hi = b.hi[a];
    if (r.parallel[a]) {
      if (r.o[a] < lo || r.o[a] > hi) return INFINITY;
      continue;
    }
    double t0 = (lo - r.o[a]) * r.inv[a];
    double t1 = (hi - r.o[a]) * r.inv[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) t_near = t0;
    if (t1 < t_far) t_far = t1;
    if (t_near > t_far) return INFINITY;
  }
  return t_near;
}

}  // namespace

void Bvh::build(const std::vector<Vec3>& vertices, const std::vector<std::array<std::uint32_t, 3>>& triangles) {
  Builder(vertices, triangles, nodes_, packets_).run();
}

bool Bvh::intersect(const simd::RayData& ray, double t_max, double& t, std::uint32_t& prim,
                    simd::PacketFn kernel) const {
  if (nodes_.empty()) return false;
  RaySlab slab;
  const double d[3] = {ray.dx, ray.dy, ray.dz};
  const double o[3] = {ray.ox, ray.oy, ray.oz};
  for (int a = 0; a < 3; ++a) {
    slab.o[a] = o[a];
    slab.parallel[a] = d[a] == 0.0;
    slab.inv[a] = slab.parallel[a] ? 0.0 : 1.0 / d[a];
  }

  simd::HitRecord best{INFINITY, simd::kInvalidPrim, t_max};
  std::uint32_t stack[kMaxSahDepth + 64];
  int sp = 0;
  if (box_entry(nodes_[0].bounds, slab, t_max) == INFINITY) return false;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& node = nodes_[stack[--sp]];
    if (node.count > 0) {
      kernel(packets_[node.first], ray, best);
      continue;
    }
    const double limit = std::min(best.t, t_max);
    const double tl = box_entry(nodes_[node.first].bounds, slab, limit);
    const double tr = box_entry(nodes_[node.right].bounds, slab, limit);
    const bool hit_l = tl != INFINITY;
    const bool hit_r = tr != INFINITY;
    if (hit_l && hit_r) {
      // Near child on top of the stack.
      if (tl <= tr) {
        stack[sp++] = node.right;
        stack[sp++] = node.first;
      } else {
        stack[sp++] = node.first;
        stack[sp++] = node.right;
      }
    } else if (hit_l) {
      stack[sp++] = node.first;
    } else if (hit_r) {
      stack[sp++] = node.right;
    }
  }
  if (best.prim == simd::kInvalidPrim) return false;
  t = best.t;
  prim = best.prim;
  return true;
}

}  // namespace orchard
