#include "orchardsim/vls.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "orchardsim/error.hpp"
#include "orchardsim/parallel.hpp"
#include "orchardsim/rng.hpp"

namespace orchard {

namespace {
constexpr double kOriginOffset = 1e-7;
constexpr double kMicro = 1e6;
}  // namespace

void TriangleMeshScene::finalize() { bvh.build(vertices, triangles); }

double TriangleMeshScene::surface_area() const {
  double total = 0.0;
  for (const auto& t : triangles) {
    total += 0.5 * norm(cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]));
  }
  return total;
}

void add_triangle(TriangleMeshScene& scene, const Vec3& a, const Vec3& b, const Vec3& c,
                  const TriangleLabel& label) {
  const auto base = static_cast<std::uint32_t>(scene.vertices.size());
  scene.vertices.push_back(a);
  scene.vertices.push_back(b);
  scene.vertices.push_back(c);
  scene.triangles.push_back({base, base + 1, base + 2});
  scene.labels.push_back(label);
}

void add_tube(TriangleMeshScene& scene, const OrganCurve& organ, int sides, const TriangleLabel& label) {
  if (sides < 3) throw InvalidArgument("add_tube: sides must be >= 3");
  std::vector<Vec3> pts;
  std::vector<double> radii;
  for (std::size_t i = 0; i < organ.size(); ++i) {
    if (!pts.empty() && organ.centerline[i] == pts.back()) {
      ++scene.skipped_segments;
      continue;
    }
    pts.push_back(organ.centerline[i]);
    radii.push_back(organ.radii[i]);
  }
  if (pts.size() < 2) return;

  const std::size_t n = pts.size();
  std::vector<Vec3> tangents(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0) {
      tangents[i] = normalized(pts[1] - pts[0]);
    } else if (i + 1 == n) {
      tangents[i] = normalized(pts[i] - pts[i - 1]);
    } else {
      const Vec3 bis = normalized(pts[i + 1] - pts[i]) + normalized(pts[i] - pts[i - 1]);
      tangents[i] = norm(bis) > 1e-9 ? normalized(bis) : normalized(pts[i + 1] - pts[i]);
    }
  }

  // Rings framed by parallel transport so consecutive rings do not twist.
  const auto base = static_cast<std::uint32_t>(scene.vertices.size());
  Vec3 u, v;
  orthonormal_basis(tangents[0], u, v);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      Vec3 moved = u - tangents[i] * dot(u, tangents[i]);
      if (norm(moved) < 1e-9) {
        orthonormal_basis(tangents[i], u, v);
      } else {
        u = normalized(moved);
      }
      v = cross(tangents[i], u);
    }
    for (int k = 0; k < sides; ++k) {
      const double phi = kTwoPi * k / sides;
      scene.vertices.push_back(pts[i] + (u * std::cos(phi) + v * std::sin(phi)) * radii[i]);
    }
  }

  const auto s = static_cast<std::uint32_t>(sides);
  auto ring = [&](std::size_t i, std::uint32_t k) { return base + static_cast<std::uint32_t>(i) * s + k % s; };
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::uint32_t k = 0; k < s; ++k) {
      const std::uint32_t a = ring(i, k), b = ring(i, k + 1), c = ring(i + 1, k), d = ring(i + 1, k + 1);
      scene.triangles.push_back({a, b, d});
      scene.triangles.push_back({a, d, c});
      scene.labels.push_back(label);
      scene.labels.push_back(label);
    }
  }
  for (std::uint32_t k = 1; k + 1 < s; ++k) {
    scene.triangles.push_back({ring(0, 0), ring(0, k + 1), ring(0, k)});
    scene.labels.push_back(label);
    scene.triangles.push_back({ring(n - 1, 0), ring(n - 1, k), ring(n - 1, k + 1)});
    scene.labels.push_back(label);
  }
}

TriangleMeshScene tessellate(const PanelSkeleton& panel, int sides) {
  if (sides < 6) throw InvalidArgument("tessellate: sides_per_ring must be >= 6");
  TriangleMeshScene scene;
  for (const auto& tree : panel.trees) {
    add_tube(scene, tree.trunk, sides, {Semantic::Trunk, tree.tree_id, 0});
    for (const auto& b : tree.branches) add_tube(scene, b.curve, sides, {Semantic::Branch, tree.tree_id, b.branch_id});
  }
  scene.finalize();
  return scene;
}

// ---------------------------------------------------------------------------

void validate(const ScannerConfig& cfg) {
  if (!is_finite(cfg.position)) throw InvalidArgument("scanner: non-finite position");
  if (!(cfg.resolution_deg >= 1.0 / kMicro)) throw InvalidArgument("scanner: resolution must be >= 1e-6 degrees");
  if (!(cfg.az_max_deg > cfg.az_min_deg)) throw InvalidArgument("scanner: degenerate azimuth range");
  if (!(cfg.el_max_deg > cfg.el_min_deg)) throw InvalidArgument("scanner: degenerate elevation range");
  if (cfg.el_min_deg < -90.0 || cfg.el_max_deg > 90.0) throw InvalidArgument("scanner: elevation outside [-90, 90]");
  if (cfg.az_max_deg - cfg.az_min_deg > 360.0) throw InvalidArgument("scanner: azimuth span exceeds 360 degrees");
  if (!(cfg.max_range_m > 0.0)) throw InvalidArgument("scanner: max_range must be > 0");
  if (!(cfg.range_noise_sigma_m >= 0.0)) throw InvalidArgument("scanner: negative range noise");
}

ScanGrid scan_grid(const ScannerConfig& cfg) {
  validate(cfg);
  ScanGrid g;
  g.step_udeg = std::llround(cfg.resolution_deg * kMicro);
  g.az_min_udeg = std::llround(cfg.az_min_deg * kMicro);
  g.el_min_udeg = std::llround(cfg.el_min_deg * kMicro);
  const std::int64_t az_span = std::llround(cfg.az_max_deg * kMicro) - g.az_min_udeg;
  const std::int64_t el_span = std::llround(cfg.el_max_deg * kMicro) - g.el_min_udeg;
  g.n_az = az_span / g.step_udeg + 1;
  g.n_el = el_span / g.step_udeg + 1;
  return g;
}

simd::RayData scan_ray(const ScannerConfig& cfg, const ScanGrid& grid, std::int64_t i, std::int64_t j) {
  const double az = deg_to_rad(static_cast<double>(grid.az_udeg(i)) / kMicro + cfg.yaw_deg);
  const double el = deg_to_rad(static_cast<double>(grid.el_udeg(j)) / kMicro);
  const double ce = std::cos(el);
  const Vec3 dir{ce * std::cos(az), ce * std::sin(az), std::sin(el)};
  const Vec3 origin = cfg.position + dir * kOriginOffset;
  return {origin.x, origin.y, origin.z, dir.x, dir.y, dir.z};
}

namespace {

template <typename CastFn>
ScanResult run_scan(const ScannerConfig& cfg, int jobs, CastFn&& cast) {
  const ScanGrid grid = scan_grid(cfg);
  const double t_max = cfg.max_range_m - kOriginOffset;
  std::vector<std::vector<ScanHit>> rows(static_cast<std::size_t>(grid.n_az));
  parallel_for(rows.size(), jobs, [&](std::size_t row) {
    const auto i = static_cast<std::int64_t>(row);
    std::vector<ScanHit>& out = rows[row];
    Rng noise(derive_seed(cfg.noise_seed, row, 4));
    for (std::int64_t j = 0; j < grid.n_el; ++j) {
      const simd::RayData ray = scan_ray(cfg, grid, i, j);
      double t = 0.0;
      std::uint32_t prim = 0;
      if (!cast(ray, t_max, t, prim)) continue;
      if (cfg.range_noise_sigma_m > 0.0) t = std::max(t + noise.normal(0.0, cfg.range_noise_sigma_m), 0.0);
      const Vec3 p{ray.ox + ray.dx * t, ray.oy + ray.dy * t, ray.oz + ray.dz * t};
      out.push_back({grid.az_udeg(i), grid.el_udeg(j), t + kOriginOffset, p, prim});
    }
  });
  ScanResult result;
  result.ray_count = grid.ray_count();
  std::size_t total = 0;
  for (const auto& r : rows) total += r.size();
  result.hits.reserve(total);
  for (auto& r : rows) result.hits.insert(result.hits.end(), r.begin(), r.end());
  return result;
}

}  // namespace

ScanResult scan_hits(const TriangleMeshScene& scene, const ScannerConfig& cfg, int jobs) {
  const simd::PacketFn kernel = simd::packet_kernel();
  return run_scan(cfg, jobs, [&](const simd::RayData& ray, double t_max, double& t, std::uint32_t& prim) {
    return scene.bvh.intersect(ray, t_max, t, prim, kernel);
  });
}

ScanResult scan_hits_brute_force(const TriangleMeshScene& scene, const ScannerConfig& cfg) {
  return run_scan(cfg, 1, [&](const simd::RayData& ray, double t_max, double& t, std::uint32_t& prim) {
    bool found = false;
    for (std::uint32_t k = 0; k < scene.triangles.size(); ++k) {
      const auto& tri = scene.triangles[k];
      const Vec3& a = scene.vertices[tri[0]];
      const Vec3& b = scene.vertices[tri[1]];
      const Vec3& c = scene.vertices[tri[2]];
      const double v0[3] = {a.x, a.y, a.z}, v1[3] = {b.x, b.y, b.z}, v2[3] = {c.x, c.y, c.z};
      double tk;
      if (simd::intersect_triangle(ray, v0, v1, v2, t_max, tk) && (!found || tk < t)) {
        t = tk;
        prim = k;
        found = true;
      }
    }
    return found;
  });
}

LabeledPointCloud hits_to_cloud(const TriangleMeshScene& scene, const ScanResult& result, std::uint64_t seed,
                                const std::string& generator) {
  LabeledPointCloud cloud;
  cloud.seed = seed;
  cloud.generator = generator;
  cloud.points.reserve(result.hits.size());
  for (const auto& h : result.hits) {
    const TriangleLabel& l = scene.labels[h.triangle];
    LabeledPoint p;
    p.position = {static_cast<float>(h.position.x), static_cast<float>(h.position.y),
                  static_cast<float>(h.position.z)};
    p.semantic = l.semantic;
    p.tree_id = l.tree_id;
    p.branch_id = l.branch_id;
    cloud.points.push_back(p);
  }
  return cloud;
}

LabeledPointCloud scan(const TriangleMeshScene& scene, const ScannerConfig& cfg, int jobs) {
  char gen[128];
  std::snprintf(gen, sizeof(gen), "orchardsim vls resolution_deg=%.6f", cfg.resolution_deg);
  return hits_to_cloud(scene, scan_hits(scene, cfg, jobs), cfg.noise_seed, gen);
}

double resolution_to_spacing(double resolution_deg, double distance_m) {
  if (!(resolution_deg > 0.0) || !(distance_m >= 0.0)) {
    throw InvalidArgument("resolution_to_spacing: inputs must be positive");
  }
  return distance_m * deg_to_rad(resolution_deg);
}

}  // namespace orchard
