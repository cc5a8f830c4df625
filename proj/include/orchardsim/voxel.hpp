#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "orchardsim/cloud.hpp"

namespace orchard {

using VoxelIndex = std::array<std::int32_t, 3>;

struct VoxelIndexHash {
  std::size_t operator()(const VoxelIndex& v) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(v[0]);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(v[1]);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(v[2]);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

/// Sparse occupancy of a cloud. Occupied voxels are stored once each, in
/// order of first appearance; `point_slot[i]` is the slot of input point i.
struct VoxelGrid {
  double voxel_size = 0.0;
  std::vector<VoxelIndex> voxels;
  std::unordered_map<VoxelIndex, std::uint32_t, VoxelIndexHash> slot_of;
  std::vector<std::uint32_t> point_slot;

  std::size_t occupied_count() const { return voxels.size(); }
  std::size_t point_count() const { return point_slot.size(); }
  const VoxelIndex& voxel_of_point(std::size_t i) const { return voxels[point_slot[i]]; }
};

/// Index of the voxel containing `p`: componentwise floor(p / voxel_size).
VoxelIndex voxel_index(const Point3f& p, double voxel_size);

/// Throws InvalidArgument("empty input") / ("invalid voxel size").
VoxelGrid voxelize(const LabeledPointCloud& cloud, double voxel_size);

}  // namespace orchard
