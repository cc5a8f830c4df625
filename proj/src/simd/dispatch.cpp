#include <atomic>
#include <cstdlib>
#include <string>

#include "orchardsim/error.hpp"
#include "orchardsim/simd/kernels.hpp"

namespace orchard::simd {

#ifndef ORCHARDSIM_HAVE_AVX2
// Non-x86 builds: the AVX2 entry points alias the reference kernels and are
// never selected by detect_isa().
bool floor_div_avx2(std::span<const float> in, double voxel_size, std::span<std::int32_t> out) {
  return floor_div_scalar(in, voxel_size, out);
}
bool intersect_packet_avx2(const TriPacket4& packet, const RayData& ray, HitRecord& best) {
  return intersect_packet_scalar(packet, ray, best);
}
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(ORCHARDSIM_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

Isa detect_isa() { return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar; }

namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("ORCHARDSIM_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::Scalar;
    if (v == "avx2" && isa_supported(Isa::Avx2)) return Isa::Avx2;
  }
  return detect_isa();
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw InvalidArgument("SIMD backend '" + std::string(isa_name(isa)) + "' not supported here");
  }
  active().store(isa, std::memory_order_relaxed);
}

bool floor_div(std::span<const float> in, double voxel_size, std::span<std::int32_t> out) {
  return active_isa() == Isa::Avx2 ? floor_div_avx2(in, voxel_size, out)
                                   : floor_div_scalar(in, voxel_size, out);
}

PacketFn packet_kernel() {
  return active_isa() == Isa::Avx2 ? &intersect_packet_avx2 : &intersect_packet_scalar;
}

}  // namespace orchard::simd
