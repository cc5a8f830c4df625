#include <cmath>

#include "orchardsim/simd/kernels.hpp"

namespace orchard::simd {

namespace {
constexpr double kInt32Lo = -2147483648.0;
constexpr double kInt32Hi = 2147483647.0;
}  // namespace

bool floor_div_scalar(std::span<const float> in, double voxel_size, std::span<std::int32_t> out) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double q = std::floor(static_cast<double>(in[i]) / voxel_size);
    if (!(q >= kInt32Lo && q <= kInt32Hi)) return false;
    out[i] = static_cast<std::int32_t>(q);
  }
  return true;
}

namespace {

// Shared lane body; the AVX2 kernel reproduces these operations verbatim.
inline bool lane_hit(double v0x, double v0y, double v0z, double e1x, double e1y, double e1z,
                     double e2x, double e2y, double e2z, const RayData& r, double& t_out) {
  const double px = r.dy * e2z - r.dz * e2y;
  const double py = r.dz * e2x - r.dx * e2z;
  const double pz = r.dx * e2y - r.dy * e2x;
  const double det = e1x * px + e1y * py + e1z * pz;
  if (!(std::fabs(det) >= kParallelEps)) return false;
  const double inv = 1.0 / det;
  const double tx = r.ox - v0x;
  const double ty = r.oy - v0y;
  const double tz = r.oz - v0z;
  const double u = (tx * px + ty * py + tz * pz) * inv;
  if (!(u >= 0.0 && u <= 1.0)) return false;
  const double qx = ty * e1z - tz * e1y;
  const double qy = tz * e1x - tx * e1z;
  const double qz = tx * e1y - ty * e1x;
  const double v = (r.dx * qx + r.dy * qy + r.dz * qz) * inv;
  if (!(v >= 0.0 && u + v <= 1.0)) return false;
  t_out = (e2x * qx + e2y * qy + e2z * qz) * inv;
  return true;
}

}  // namespace

bool intersect_packet_scalar(const TriPacket4& p, const RayData& ray, HitRecord& best) {
  bool improved = false;
  for (int k = 0; k < 4; ++k) {
    double t;
    if (!lane_hit(p.v0x[k], p.v0y[k], p.v0z[k], p.e1x[k], p.e1y[k], p.e1z[k], p.e2x[k], p.e2y[k],
                  p.e2z[k], ray, t)) {
      continue;
    }
    if (!(t > 0.0 && t <= best.t_max)) continue;
    if (t < best.t || (t == best.t && p.prim[k] < best.prim)) {
      best.t = t;
      best.prim = p.prim[k];
      improved = true;
    }
  }
  return improved;
}

bool intersect_triangle(const RayData& ray, const double v0[3], const double v1[3],
                        const double v2[3], double t_max, double& t_out) {
  const double e1x = v1[0] - v0[0], e1y = v1[1] - v0[1], e1z = v1[2] - v0[2];
  const double e2x = v2[0] - v0[0], e2y = v2[1] - v0[1], e2z = v2[2] - v0[2];
  double t;
  if (!lane_hit(v0[0], v0[1], v0[2], e1x, e1y, e1z, e2x, e2y, e2z, ray, t)) return false;
  if (!(t > 0.0 && t <= t_max)) return false;
  t_out = t;
  return true;
}

}  // namespace orchard::simd
