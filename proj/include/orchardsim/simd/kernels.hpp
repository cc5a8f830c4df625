#pragma once

// Data-parallel inner loops with a portable scalar reference and AVX2
// variants. Both variants perform the same IEEE operations in the same
// order (no FMA contraction), so their results are bit-identical and the
// selected backend never changes simulator output.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace orchard::simd {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

/// Best ISA supported by this CPU and build.
Isa detect_isa();

/// Backend used by dispatching entry points. Defaults to detect_isa(),
/// overridable with ORCHARDSIM_SIMD=scalar|avx2 or set_active_isa().
Isa active_isa();

/// Throws InvalidArgument if `isa` is not supported on this machine.
void set_active_isa(Isa isa);

bool isa_supported(Isa isa);

// ---------------------------------------------------------------------------
// Voxel indexing: out[i] = floor(double(in[i]) / voxel_size) as int32.
// Returns false if any result falls outside the int32 range (out is then
// unspecified).
// ---------------------------------------------------------------------------

using FloorDivFn = bool (*)(std::span<const float> in, double voxel_size,
                            std::span<std::int32_t> out);

bool floor_div_scalar(std::span<const float> in, double voxel_size, std::span<std::int32_t> out);
bool floor_div_avx2(std::span<const float> in, double voxel_size, std::span<std::int32_t> out);
bool floor_div(std::span<const float> in, double voxel_size, std::span<std::int32_t> out);

// ---------------------------------------------------------------------------
// Ray versus four triangles (Moller-Trumbore, double precision).
// ---------------------------------------------------------------------------

constexpr std::uint32_t kInvalidPrim = 0xFFFFFFFFu;

/// Four triangles in structure-of-arrays layout: vertex 0 and the two edge
/// vectors e1 = v1 - v0, e2 = v2 - v0. Unused lanes are all-zero with
/// prim = kInvalidPrim and never report a hit.
struct alignas(32) TriPacket4 {
  double v0x[4], v0y[4], v0z[4];
  double e1x[4], e1y[4], e1z[4];
  double e2x[4], e2y[4], e2z[4];
  std::uint32_t prim[4];
};

struct RayData {
  double ox, oy, oz;
  double dx, dy, dz;
};

/// Nearest accepted hit so far. A candidate replaces it when
/// 0 < t <= t_max and (t < best.t or (t == best.t and prim < best.prim)).
struct HitRecord {
  double t;
  std::uint32_t prim = kInvalidPrim;
  double t_max;
};

/// Determinant magnitude below which a triangle is treated as parallel.
constexpr double kParallelEps = 1e-14;

using PacketFn = bool (*)(const TriPacket4& packet, const RayData& ray, HitRecord& best);

bool intersect_packet_scalar(const TriPacket4& packet, const RayData& ray, HitRecord& best);
bool intersect_packet_avx2(const TriPacket4& packet, const RayData& ray, HitRecord& best);

/// Function pointer for the active backend (resolved once per call site).
PacketFn packet_kernel();

/// Single triangle test with edges computed from vertices, used by the
/// brute-force reference path. Arithmetic matches the packet kernels.
bool intersect_triangle(const RayData& ray, const double v0[3], const double v1[3],
                        const double v2[3], double t_max, double& t_out);

}  // namespace orchard::simd
