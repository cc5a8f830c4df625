#include "orchardsim/voxel.hpp"

#include <cmath>

#include "orchardsim/error.hpp"
#include "orchardsim/simd/kernels.hpp"

namespace orchard {

VoxelIndex voxel_index(const Point3f& p, double voxel_size) {
  const float xyz[3] = {p.x, p.y, p.z};
  VoxelIndex out{};
  if (!simd::floor_div_scalar(xyz, voxel_size, out)) {
    throw InvalidArgument("voxel index out of int32 range");
  }
  return out;
}

VoxelGrid voxelize(const LabeledPointCloud& cloud, double voxel_size) {
  if (cloud.empty()) throw InvalidArgument("empty input");
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) throw InvalidArgument("invalid voxel size");

  const std::size_t n = cloud.size();
  std::vector<float> coords(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    coords[i] = cloud.points[i].position.x;
    coords[n + i] = cloud.points[i].position.y;
    coords[2 * n + i] = cloud.points[i].position.z;
  }
  std::vector<std::int32_t> idx(3 * n);
  if (!simd::floor_div(coords, voxel_size, idx)) {
    throw InvalidArgument("voxel index out of int32 range");
  }

  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.point_slot.resize(n);
  grid.slot_of.reserve(n / 4 + 16);
  for (std::size_t i = 0; i < n; ++i) {
    const VoxelIndex key{idx[i], idx[n + i], idx[2 * n + i]};
    const auto [it, inserted] =
        grid.slot_of.try_emplace(key, static_cast<std::uint32_t>(grid.voxels.size()));
    if (inserted) grid.voxels.push_back(key);
    grid.point_slot[i] = it->second;
  }
  return grid;
}

}  // namespace orchard
