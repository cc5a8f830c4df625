#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "orchardsim/cloud.hpp"
#include "orchardsim/geometry.hpp"
#include "orchardsim/panel.hpp"
#include "orchardsim/simd/kernels.hpp"

namespace orchard {

struct TriangleLabel {
  Semantic semantic = Semantic::Trunk;
  std::int32_t tree_id = 1;
  std::int32_t branch_id = 0;
  bool operator==(const TriangleLabel&) const = default;
};

/// Bounding volume hierarchy over a triangle soup. Leaves hold one packet of
/// up to four triangles so leaf tests run through the SIMD packet kernel.
class Bvh {
 public:
  struct Node {
    Aabb bounds;
    std::uint32_t first = 0;  // leaf: packet index; inner: left child index
    std::uint32_t count = 0;  // leaf: 1 packet; inner: 0
    std::uint32_t right = 0;  // inner: right child index
    std::uint8_t axis = 0;
  };

  Bvh() = default;
  void build(const std::vector<Vec3>& vertices, const std::vector<std::array<std::uint32_t, 3>>& triangles);

  /// Nearest hit along the ray with 0 < t <= t_max; ties on t resolve to
  /// the lower triangle index. Returns false if nothing is hit.
  bool intersect(const simd::RayData& ray, double t_max, double& t, std::uint32_t& prim,
                 simd::PacketFn kernel) const;

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t packet_count() const { return packets_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
  std::vector<simd::TriPacket4> packets_;
};

/// Tessellated panel ready for ray casting.
struct TriangleMeshScene {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<TriangleLabel> labels;  // one per triangle
  Bvh bvh;
  std::size_t skipped_segments = 0;   // zero-length centerline segments

  /// Builds the BVH; call after editing geometry.
  void finalize();
  double surface_area() const;
};

/// Adds one organ as a closed tube: `sides`-gon rings at every centerline
/// sample, quads split into triangles, fan caps at both ends.
void add_tube(TriangleMeshScene& scene, const OrganCurve& organ, int sides, const TriangleLabel& label);

/// Adds an arbitrary triangle (test scenes, occluders).
void add_triangle(TriangleMeshScene& scene, const Vec3& a, const Vec3& b, const Vec3& c,
                  const TriangleLabel& label);

/// All organs of a panel; requires sides >= 6. Calls finalize().
TriangleMeshScene tessellate(const PanelSkeleton& panel, int sides);

/// Virtual scanner. Angles are in degrees and quantized to micro-degrees so
/// that grids whose resolutions differ by an integer factor share nodes
/// exactly (nested grids).
struct ScannerConfig {
  Vec3 position{0.0, -3.0, 1.5};
  double az_min_deg = 51.0;  // azimuth measured from +x toward +y
  double az_max_deg = 129.0;
  double el_min_deg = -25.0;
  double el_max_deg = 20.0;
  double resolution_deg = 0.3;
  double max_range_m = 50.0;
  double range_noise_sigma_m = 0.0;
  double yaw_deg = 0.0;  // rotation of the scanner about +z
  std::uint64_t noise_seed = 0;
  bool operator==(const ScannerConfig&) const = default;
};

void validate(const ScannerConfig& cfg);

/// Grid geometry derived from a config.
struct ScanGrid {
  std::int64_t az_min_udeg = 0;
  std::int64_t el_min_udeg = 0;
  std::int64_t step_udeg = 0;
  std::int64_t n_az = 0;
  std::int64_t n_el = 0;
  std::int64_t ray_count() const { return n_az * n_el; }
  /// Azimuth / elevation of node (i, j) in micro-degrees.
  std::int64_t az_udeg(std::int64_t i) const { return az_min_udeg + i * step_udeg; }
  std::int64_t el_udeg(std::int64_t j) const { return el_min_udeg + j * step_udeg; }
};

ScanGrid scan_grid(const ScannerConfig& cfg);

/// Origin and direction of the ray through grid node (i, j).
simd::RayData scan_ray(const ScannerConfig& cfg, const ScanGrid& grid, std::int64_t i, std::int64_t j);

struct ScanHit {
  std::int64_t az_udeg;  // grid node (absolute angles, micro-degrees)
  std::int64_t el_udeg;
  double range;          // distance along the ray, meters
  Vec3 position;         // before float conversion
  std::uint32_t triangle;
};

struct ScanResult {
  std::vector<ScanHit> hits;  // row-major over (azimuth i, elevation j)
  std::int64_t ray_count = 0;
};

/// Casts every grid ray; deterministic for any `jobs`.
ScanResult scan_hits(const TriangleMeshScene& scene, const ScannerConfig& cfg, int jobs = 1);

/// Same rays against every triangle without the BVH (reference path).
ScanResult scan_hits_brute_force(const TriangleMeshScene& scene, const ScannerConfig& cfg);

LabeledPointCloud hits_to_cloud(const TriangleMeshScene& scene, const ScanResult& result, std::uint64_t seed,
                                const std::string& generator);

LabeledPointCloud scan(const TriangleMeshScene& scene, const ScannerConfig& cfg, int jobs = 1);

/// Spacing between adjacent rays at `distance`: distance * resolution in radians.
double resolution_to_spacing(double resolution_deg, double distance_m);

}  // namespace orchard
