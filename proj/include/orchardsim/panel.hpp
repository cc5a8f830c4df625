#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "orchardsim/cloud.hpp"
#include "orchardsim/rng.hpp"
#include "orchardsim/treegen.hpp"

namespace orchard {

enum class SamplingMode { WithReplacement, WithoutReplacement };

std::string to_string(SamplingMode mode);
SamplingMode sampling_mode_from_string(const std::string& s);

struct PanelParams {
  int n_trees_min = 8;
  int n_trees_max = 10;
  double spacing_min = 0.6;  // trunk base to trunk base, meters
  double spacing_max = 0.9;
  Vec3 row_axis{1.0, 0.0, 0.0};
  SamplingMode mode = SamplingMode::WithoutReplacement;
  bool operator==(const PanelParams&) const = default;
};

void validate(const PanelParams& params);

struct PanelLayout {
  int n_trees = 0;
  std::vector<double> spacings;         // n_trees - 1 entries
  Vec3 row_axis{1.0, 0.0, 0.0};
  std::vector<std::size_t> tree_refs;   // indices into the pool, row order
  SamplingMode sampling_mode = SamplingMode::WithoutReplacement;
  bool operator==(const PanelLayout&) const = default;
};

/// Balanced draw over a tree pool shared by successive panels: members are
/// dealt from a shuffled deck and the deck is refilled only once every member
/// has been used, so usage counts never differ by more than one.
class PoolSampler {
 public:
  PoolSampler(std::size_t pool_size, std::uint64_t seed);

  /// Draws `n` trees for one panel. Without replacement the n trees are
  /// distinct; throws InvalidArgument if the pool is smaller than n.
  std::vector<std::size_t> draw(std::size_t n, SamplingMode mode);

  std::size_t pool_size() const { return pool_size_; }

 private:
  void refill();

  std::size_t pool_size_;
  Rng rng_;
  std::vector<std::size_t> deck_;  // remaining members; next draw from the back
};

PanelLayout plan_panel(PoolSampler& sampler, const PanelParams& params, Rng& rng);

/// Trees placed along the row with panel-level ids: tree_id = position + 1,
/// branch ids renumbered densely across the panel.
struct PanelSkeleton {
  std::vector<TreeSkeleton> trees;
  std::vector<Vec3> positions;  // trunk base of each tree
};

PanelSkeleton build_panel(const PanelLayout& layout, std::span<const TreeSkeleton> pool);

/// One-shot assembly with a fresh sampler seeded from `rng`.
PanelLayout assemble_panel(std::span<const TreeSkeleton> pool, const PanelParams& params, Rng& rng,
                           PanelSkeleton& panel);

/// Noise-free reference cloud: points uniformly distributed over the lateral
/// surfaces of all organs (truncated cones per centerline segment).
/// The point count is round(total_area * density).
LabeledPointCloud panel_to_cloud(const PanelSkeleton& panel, double density, std::uint64_t seed);

/// Lateral surface area of all organs, square meters.
double panel_surface_area(const PanelSkeleton& panel);

}  // namespace orchard
