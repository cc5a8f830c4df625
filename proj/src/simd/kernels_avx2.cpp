// Compiled with -mavx2 (and without -mfma) when the toolchain targets x86-64.
#include <immintrin.h>

#include "orchardsim/simd/kernels.hpp"

namespace orchard::simd {

bool floor_div_avx2(std::span<const float> in, double voxel_size, std::span<std::int32_t> out) {
  const std::size_t n = in.size();
  const __m256d size = _mm256_set1_pd(voxel_size);
  const __m256d lo = _mm256_set1_pd(-2147483648.0);
  const __m256d hi = _mm256_set1_pd(2147483647.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_cvtps_pd(_mm_loadu_ps(in.data() + i));
    const __m256d q = _mm256_floor_pd(_mm256_div_pd(x, size));
    const __m256d ok = _mm256_and_pd(_mm256_cmp_pd(q, lo, _CMP_GE_OQ), _mm256_cmp_pd(q, hi, _CMP_LE_OQ));
    if (_mm256_movemask_pd(ok) != 0xF) return false;
    _mm_storeu_si128(reinterpret_cast<__m128i*>(out.data() + i), _mm256_cvttpd_epi32(q));
  }
  return floor_div_scalar(in.subspan(i), voxel_size, out.subspan(i));
}

bool intersect_packet_avx2(const TriPacket4& p, const RayData& r, HitRecord& best) {
  const __m256d dx = _mm256_set1_pd(r.dx);
  const __m256d dy = _mm256_set1_pd(r.dy);
  const __m256d dz = _mm256_set1_pd(r.dz);
  const __m256d e1x = _mm256_load_pd(p.e1x), e1y = _mm256_load_pd(p.e1y), e1z = _mm256_load_pd(p.e1z);
  const __m256d e2x = _mm256_load_pd(p.e2x), e2y = _mm256_load_pd(p.e2y), e2z = _mm256_load_pd(p.e2z);

  const __m256d px = _mm256_sub_pd(_mm256_mul_pd(dy, e2z), _mm256_mul_pd(dz, e2y));
  const __m256d py = _mm256_sub_pd(_mm256_mul_pd(dz, e2x), _mm256_mul_pd(dx, e2z));
  const __m256d pz = _mm256_sub_pd(_mm256_mul_pd(dx, e2y), _mm256_mul_pd(dy, e2x));
  const __m256d det = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(e1x, px), _mm256_mul_pd(e1y, py)),
                                    _mm256_mul_pd(e1z, pz));
  const __m256d abs_det = _mm256_andnot_pd(_mm256_set1_pd(-0.0), det);
  __m256d mask = _mm256_cmp_pd(abs_det, _mm256_set1_pd(kParallelEps), _CMP_GE_OQ);
  if (_mm256_movemask_pd(mask) == 0) return false;

  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d zero = _mm256_setzero_pd();
  const __m256d inv = _mm256_div_pd(one, det);
  const __m256d tx = _mm256_sub_pd(_mm256_set1_pd(r.ox), _mm256_load_pd(p.v0x));
  const __m256d ty = _mm256_sub_pd(_mm256_set1_pd(r.oy), _mm256_load_pd(p.v0y));
  const __m256d tz = _mm256_sub_pd(_mm256_set1_pd(r.oz), _mm256_load_pd(p.v0z));
  const __m256d u = _mm256_mul_pd(
      _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(tx, px), _mm256_mul_pd(ty, py)), _mm256_mul_pd(tz, pz)),
      inv);
  mask = _mm256_and_pd(mask, _mm256_and_pd(_mm256_cmp_pd(u, zero, _CMP_GE_OQ),
                                           _mm256_cmp_pd(u, one, _CMP_LE_OQ)));
  if (_mm256_movemask_pd(mask) == 0) return false;

  const __m256d qx = _mm256_sub_pd(_mm256_mul_pd(ty, e1z), _mm256_mul_pd(tz, e1y));
  const __m256d qy = _mm256_sub_pd(_mm256_mul_pd(tz, e1x), _mm256_mul_pd(tx, e1z));
  const __m256d qz = _mm256_sub_pd(_mm256_mul_pd(tx, e1y), _mm256_mul_pd(ty, e1x));
  const __m256d v = _mm256_mul_pd(
      _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(dx, qx), _mm256_mul_pd(dy, qy)), _mm256_mul_pd(dz, qz)),
      inv);
  mask = _mm256_and_pd(mask, _mm256_and_pd(_mm256_cmp_pd(v, zero, _CMP_GE_OQ),
                                           _mm256_cmp_pd(_mm256_add_pd(u, v), one, _CMP_LE_OQ)));
  const __m256d t = _mm256_mul_pd(
      _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(e2x, qx), _mm256_mul_pd(e2y, qy)), _mm256_mul_pd(e2z, qz)),
      inv);
  mask = _mm256_and_pd(mask, _mm256_and_pd(_mm256_cmp_pd(t, zero, _CMP_GT_OQ),
                                           _mm256_cmp_pd(t, _mm256_set1_pd(best.t_max), _CMP_LE_OQ)));
  const int bits = _mm256_movemask_pd(mask);
  if (bits == 0) return false;

  alignas(32) double ts[4];
  _mm256_store_pd(ts, t);
  bool improved = false;
  for (int k = 0; k < 4; ++k) {
    if (!(bits & (1 << k))) continue;
    if (ts[k] < best.t || (ts[k] == best.t && p.prim[k] < best.prim)) {
      best.t = ts[k];
      best.prim = p.prim[k];
      improved = true;
    }
  }
  return improved;
}

}  // namespace orchard::simd
