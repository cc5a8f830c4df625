#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "orchardsim/basetree.hpp"
#include "orchardsim/rng.hpp"

namespace orchard {

constexpr int kTrunkSamples = 64;
constexpr int kBranchSamples = 32;
constexpr double kMinTipRadius = 0.0005;
constexpr double kHeightWeightEps = 0.001;

struct GenParams {
  int k1 = 3;  // base trunks blended per tree
  int k2 = 3;  // nearest base branches blended per primary branch
  int branch_count_min = 8;
  int branch_count_max = 10;
  double branch_zone_low = 0.25;  // fraction of trunk height
  double branch_zone_high = 0.9;
  double min_branch_separation = 0.1;  // meters
  int height_retries = 1000;           // rejection attempts per branch height
  double higher_order_prob = 0.5;
  double higher_order_scale_min = 0.3;
  double higher_order_scale_max = 0.6;
  int collision_retries = 20;
  double taper_exponent = 1.0;

  bool operator==(const GenParams&) const = default;
};

void validate(const GenParams& params);

struct PlacedBranch {
  OrganCurve curve;       // world frame
  int order = 1;          // 1 = primary, 2 = secondary
  int parent = -1;        // -1: trunk, otherwise index into TreeSkeleton::branches
  int branch_id = 0;      // dense 1..N within the tree (panel-wide after assembly)
  double attach_arc = 0;  // arc length along the parent at the attachment point
  bool operator==(const PlacedBranch&) const = default;
};

struct TreeSkeleton {
  OrganCurve trunk;
  std::vector<PlacedBranch> branches;
  int tree_id = 0;  // assigned at panel assembly
  std::uint64_t seed = 0;
  int dropped_branches = 0;
  bool operator==(const TreeSkeleton&) const = default;
};

// ---- curve utilities ------------------------------------------------------

/// Arc-length-uniform resampling to `m` samples (positions and radii linearly
/// interpolated).
OrganCurve resample(const OrganCurve& curve, int m);

/// Pointwise weighted sum of curves that already share a sample count.
OrganCurve blend(std::span<const OrganCurve> curves, std::span<const double> weights);

/// Position and radius at arc length `s` (clamped to [0, L]).
struct CurveSample {
  Vec3 position;
  Vec3 tangent;
  double radius;
};
CurveSample sample_at_arc(const OrganCurve& curve, double s);

/// Point on the trunk centerline at height `h` above its base sample.
Vec3 trunk_point_at_height(const OrganCurve& trunk, double h);
double trunk_height(const OrganCurve& trunk);

// ---- organ generator ------------------------------------------------------

/// Blend of k1 distinct random base trunks with random normalized weights,
/// resampled to kTrunkSamples.
OrganCurve interpolate_trunk(const BaseTreeLibrary& lib, int k1, Rng& rng);

/// Same blend with caller-chosen base trunks and weights (normalized here).
OrganCurve interpolate_trunk(const BaseTreeLibrary& lib, std::span<const std::size_t> indices,
                             std::span<const double> weights);

/// Sorted branch heights (meters above trunk base).
std::vector<double> sample_branch_heights(const OrganCurve& trunk, const GenParams& params, Rng& rng);

/// Indices of the k2 base branches closest in attach height (ties: lower
/// index) and their normalized weights 1/(eps + |dh|).
void nearest_branch_weights(const BaseTreeLibrary& lib, double attach_height, int k2,
                            std::vector<std::size_t>& indices, std::vector<double>& weights);

BaseBranch interpolate_branch(const BaseTreeLibrary& lib, double attach_height, int k2, Rng& rng);

/// Rigid placement of a local-frame branch on the trunk.
PlacedBranch place_primary(const OrganCurve& trunk, const BaseBranch& branch);

// ---- branch hierarchy generator -------------------------------------------

/// Random choices behind one secondary branch.
struct ChildSpec {
  std::size_t base_index = 0;
  double scale = 1.0;
  double attach_arc = 0.0;  // on the parent
  double azimuth = 0.0;     // about the parent tangent
};

std::vector<ChildSpec> draw_children(const PlacedBranch& primary, const BaseTreeLibrary& lib,
                                     const GenParams& params, Rng& rng);

PlacedBranch place_child(const PlacedBranch& parent, int parent_index, const BaseTreeLibrary& lib,
                         const ChildSpec& spec, double taper_exponent);

/// Secondary branches for `primary` (index `primary_index` in its tree). No
/// collision handling; generate_tree does that.
std::vector<PlacedBranch> generate_higher_order(const PlacedBranch& primary, int primary_index,
                                                const BaseTreeLibrary& lib, const GenParams& params,
                                                Rng& rng);

// ---- constraints ----------------------------------------------------------

/// r(s) = r_base (1 - s/S)^e, combined by pointwise min with the running
/// minimum of the input profile, floored at kMinTipRadius.
OrganCurve apply_tapering(const OrganCurve& organ, double taper_exponent);

/// Organ indices used by collision reports: 0 = trunk, i + 1 = branches[i].
struct CollisionPair {
  int organ_a = 0;
  int segment_a = 0;
  int organ_b = 0;
  int segment_b = 0;
  double clearance = 0.0;  // surface distance (negative = overlap)
};

/// Closest distance between segments [p0,p1] and [q0,q1].
double segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1);

std::vector<CollisionPair> collision_test(const TreeSkeleton& tree);

// ---- end to end -----------------------------------------------------------

/// Throws InfeasibleError when the branch layout cannot be satisfied.
TreeSkeleton generate_tree(const BaseTreeLibrary& lib, const GenParams& params, std::uint64_t seed);

/// Seed of tree `index` under a master seed.
std::uint64_t tree_seed(std::uint64_t master_seed, std::size_t index);

/// Trees 0..count-1 generated over `jobs` threads; identical for any `jobs`.
std::vector<TreeSkeleton> generate_trees(const BaseTreeLibrary& lib, const GenParams& params,
                                         std::uint64_t master_seed, std::size_t count, int jobs);

/// Structured-text dump (JSON) used for inspection and for storing trees
/// between pipeline stages. Round-trips exactly.
std::string encode_tree(const TreeSkeleton& tree);
TreeSkeleton decode_tree(const std::string& text);
void save_tree(const TreeSkeleton& tree, const std::filesystem::path& path);
TreeSkeleton load_tree(const std::filesystem::path& path);

}  // namespace orchard
