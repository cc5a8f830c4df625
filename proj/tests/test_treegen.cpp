#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "orchardsim/basetree.hpp"
#include "orchardsim/error.hpp"
#include "orchardsim/treegen.hpp"

using namespace orchard;

namespace {

OrganCurve vertical(double height, int samples, double r0, double r1, OrganKind kind = OrganKind::Trunk) {
  OrganCurve c;
  c.kind = kind;
  for (int i = 0; i < samples; ++i) {
    const double f = static_cast<double>(i) / (samples - 1);
    c.centerline.push_back({0.0, 0.0, height * f});
    c.radii.push_back(r0 + (r1 - r0) * f);
  }
  return c;
}

OrganCurve line(Vec3 a, Vec3 b, double r, int samples = 2) {
  OrganCurve c;
  c.kind = OrganKind::Branch;
  for (int i = 0; i < samples; ++i) {
    const double f = static_cast<double>(i) / (samples - 1);
    c.centerline.push_back(a + (b - a) * f);
    c.radii.push_back(r);
  }
  return c;
}

BaseBranch base_branch(double attach_height, double length, double r) {
  BaseBranch b;
  b.curve = line({0, 0, 0}, {length, 0, 0.1 * length}, r, 6);
  b.curve.radii = {r, 0.9 * r, 0.8 * r, 0.7 * r, 0.6 * r, 0.5 * r};
  b.attach_height = attach_height;
  return b;
}

// Closest distance from p to the polyline of c.
double distance_to_polyline(const Vec3& p, const OrganCurve& c) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < c.size(); ++i) {
    best = std::min(best, segment_distance(p, p, c.centerline[i], c.centerline[i + 1]));
  }
  return best;
}

bool non_increasing(const std::vector<double>& r) {
  for (std::size_t i = 1; i < r.size(); ++i) {
    if (r[i] > r[i - 1]) return false;
  }
  return true;
}

}  // namespace

TEST(InterpolateTrunk, SingleTrunkIsResampledBase) {
  BaseTreeLibrary lib = synth_library(3, 1, 4);
  Rng rng(1);
  const OrganCurve out = interpolate_trunk(lib, 1, rng);
  const OrganCurve expect = resample(lib.trunks[0], kTrunkSamples);
  ASSERT_EQ(out.size(), static_cast<std::size_t>(kTrunkSamples));
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_NEAR(distance(out.centerline[i], expect.centerline[i]), 0.0, 1e-12);
    EXPECT_NEAR(out.radii[i], expect.radii[i], 1e-15);
  }
}

TEST(InterpolateTrunk, EqualWeightsOfTwoStraightTrunksGiveMidpoints) {
  BaseTreeLibrary lib;
  lib.trunks = {vertical(2.0, 5, 0.05, 0.01), vertical(3.0, 9, 0.04, 0.02)};
  const std::vector<std::size_t> idx{0, 1};
  const std::vector<double> w{0.5, 0.5};
  const OrganCurve out = interpolate_trunk(lib, idx, w);
  EXPECT_NEAR(trunk_height(out), 2.5, 1e-12);
  for (int k = 0; k < kTrunkSamples; ++k) {
    const double f = static_cast<double>(k) / (kTrunkSamples - 1);
    const auto& p = out.centerline[static_cast<std::size_t>(k)];
    EXPECT_NEAR(p.x, 0.0, 1e-15);
    EXPECT_NEAR(p.y, 0.0, 1e-15);
    EXPECT_NEAR(p.z, 0.5 * (2.0 * f + 3.0 * f), 1e-12) << k;
    const double r_expect = 0.5 * ((0.05 + (0.01 - 0.05) * f) + (0.04 + (0.02 - 0.04) * f));
    EXPECT_NEAR(out.radii[static_cast<std::size_t>(k)], r_expect, 1e-12) << k;
  }
}

TEST(InterpolateTrunk, OutputIsConvexCombination) {
  const BaseTreeLibrary lib = synth_library(17, 8, 4);
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + static_cast<int>(rng.index(4));
    std::vector<std::size_t> idx;
    std::vector<double> w;
    std::vector<OrganCurve> inputs;
    for (int j = 0; j < k; ++j) {
      idx.push_back(rng.index(lib.trunks.size()));
      w.push_back(rng.uniform(0.01, 1.0));
      inputs.push_back(resample(lib.trunks[idx.back()], kTrunkSamples));
    }
    const OrganCurve out = interpolate_trunk(lib, idx, w);
    for (std::size_t i = 0; i < out.size(); ++i) {
      double rlo = 1e9, rhi = -1e9;
      Vec3 lo{1e9, 1e9, 1e9}, hi{-1e9, -1e9, -1e9};
      for (const auto& c : inputs) {
        rlo = std::min(rlo, c.radii[i]);
        rhi = std::max(rhi, c.radii[i]);
        lo = {std::min(lo.x, c.centerline[i].x), std::min(lo.y, c.centerline[i].y), std::min(lo.z, c.centerline[i].z)};
        hi = {std::max(hi.x, c.centerline[i].x), std::max(hi.y, c.centerline[i].y), std::max(hi.z, c.centerline[i].z)};
      }
      const double eps = 1e-12;
      ASSERT_GE(out.radii[i], rlo - eps);
      ASSERT_LE(out.radii[i], rhi + eps);
      const Vec3& p = out.centerline[i];
      ASSERT_TRUE(p.x >= lo.x - eps && p.x <= hi.x + eps && p.y >= lo.y - eps && p.y <= hi.y + eps &&
                  p.z >= lo.z - eps && p.z <= hi.z + eps);
    }
  }
}

TEST(InterpolateTrunk, TooFewTrunks) {
  const BaseTreeLibrary lib = synth_library(3, 2, 4);
  Rng rng(1);
  EXPECT_THROW(interpolate_trunk(lib, 3, rng), InvalidArgument);
}

TEST(BranchHeights, FixedCountFitsZone) {
  const OrganCurve trunk = vertical(3.0, 10, 0.05, 0.02);
  GenParams p;
  p.branch_count_min = p.branch_count_max = 8;
  p.branch_zone_low = 0.2;
  p.branch_zone_high = 0.9;
  p.min_branch_separation = 0.05;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const auto h = sample_branch_heights(trunk, p, rng);
    ASSERT_EQ(h.size(), 8u);
    ASSERT_TRUE(std::is_sorted(h.begin(), h.end()));
    for (std::size_t i = 0; i < h.size(); ++i) {
      ASSERT_GE(h[i], 0.6 - 1e-12);
      ASSERT_LE(h[i], 2.7 + 1e-12);
      if (i > 0) {
        ASSERT_GE(h[i] - h[i - 1], 0.05);
      }
    }
  }
}

TEST(BranchHeights, InfeasibleZone) {
  const OrganCurve trunk = vertical(3.0, 10, 0.05, 0.02);
  GenParams p;
  p.branch_count_min = p.branch_count_max = 3;
  p.branch_zone_low = 0.5;
  p.branch_zone_high = 0.5001;
  p.min_branch_separation = 0.1;
  Rng rng(1);
  try {
    sample_branch_heights(trunk, p, rng);
    FAIL() << "expected InfeasibleError";
  } catch (const InfeasibleError& e) {
    EXPECT_STREQ(e.what(), "infeasible branch layout");
  }
}

TEST(BranchHeights, UniformOverZoneChiSquare) {
  const OrganCurve trunk = vertical(3.0, 10, 0.05, 0.02);
  GenParams p;
  p.branch_count_min = p.branch_count_max = 1;
  p.branch_zone_low = 0.2;
  p.branch_zone_high = 0.9;
  constexpr int kDraws = 10000;
  constexpr int kBins = 20;
  std::vector<int> counts(kBins, 0);
  for (int d = 0; d < kDraws; ++d) {
    Rng rng(derive_seed(77, static_cast<std::uint64_t>(d), 0));
    const double h = sample_branch_heights(trunk, p, rng).at(0);
    const int bin = std::min(kBins - 1, static_cast<int>((h - 0.6) / 2.1 * kBins));
    ++counts[static_cast<std::size_t>(bin)];
  }
  const double expected = static_cast<double>(kDraws) / kBins;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // Upper 0.001 quantile of chi-square with 19 degrees of freedom.
  EXPECT_LT(chi2, 43.82);
}

TEST(InterpolateBranch, SingleNearestIsResampledBase) {
  BaseTreeLibrary lib;
  lib.branches = {base_branch(1.0, 0.5, 0.01), base_branch(1.4, 0.8, 0.012), base_branch(2.0, 0.6, 0.008)};
  Rng rng(9);
  const BaseBranch out = interpolate_branch(lib, 1.3, 1, rng);
  const OrganCurve expect = resample(lib.branches[1].curve, kBranchSamples);
  ASSERT_EQ(out.curve.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    EXPECT_NEAR(distance(out.curve.centerline[i], expect.centerline[i]), 0.0, 1e-12);
    EXPECT_NEAR(out.curve.radii[i], expect.radii[i], 1e-15);
  }
  EXPECT_DOUBLE_EQ(out.attach_height, 1.3);
}

TEST(InterpolateBranch, NearestDominatesWeights) {
  BaseTreeLibrary lib;
  lib.branches = {base_branch(1.0, 0.5, 0.01), base_branch(2.0, 0.8, 0.012)};
  std::vector<std::size_t> idx;
  std::vector<double> w;
  nearest_branch_weights(lib, 1.0, 2, idx, w);
  ASSERT_EQ(idx, (std::vector<std::size_t>{0, 1}));
  const double a = 1.0 / kHeightWeightEps, b = 1.0 / (kHeightWeightEps + 1.0);
  EXPECT_NEAR(w[0], a / (a + b), 1e-15);
  EXPECT_GE(w[0], 0.999);
}

TEST(InterpolateBranch, EquidistantQueryAveragesCurves) {
  BaseTreeLibrary lib;
  lib.branches = {base_branch(1.0, 0.5, 0.01), base_branch(2.0, 0.8, 0.012)};
  std::vector<std::size_t> idx;
  std::vector<double> w;
  nearest_branch_weights(lib, 1.5, 2, idx, w);
  EXPECT_EQ(w[0], 0.5);
  EXPECT_EQ(w[1], 0.5);
  Rng rng(4);
  const BaseBranch out = interpolate_branch(lib, 1.5, 2, rng);
  const OrganCurve a = resample(lib.branches[0].curve, kBranchSamples);
  const OrganCurve b = resample(lib.branches[1].curve, kBranchSamples);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vec3 mid = (a.centerline[i] + b.centerline[i]) * 0.5;
    EXPECT_NEAR(distance(out.curve.centerline[i], mid), 0.0, 1e-15);
    EXPECT_NEAR(out.curve.radii[i], 0.5 * (a.radii[i] + b.radii[i]), 1e-15);
  }
}

TEST(InterpolateBranch, TooFewBranches) {
  BaseTreeLibrary lib;
  lib.branches = {base_branch(1.0, 0.5, 0.01)};
  Rng rng(1);
  EXPECT_THROW(interpolate_branch(lib, 1.0, 2, rng), InvalidArgument);
}

TEST(PlacePrimary, AttachesOnTrunkCenterline) {
  const BaseTreeLibrary lib = synth_library(8, 5, 60);
  Rng rng(2);
  const OrganCurve trunk = interpolate_trunk(lib, 3, rng);
  for (int i = 0; i < 200; ++i) {
    const double h = rng.uniform(0.2, 0.9) * trunk_height(trunk);
    const BaseBranch b = interpolate_branch(lib, h, 3, rng);
    const PlacedBranch pb = place_primary(trunk, b);
    EXPECT_LT(distance_to_polyline(pb.curve.centerline.front(), trunk), 1e-3);
    EXPECT_NEAR(pb.curve.centerline.front().z - trunk.centerline.front().z, h, 1e-9);
    EXPECT_EQ(pb.order, 1);
    EXPECT_EQ(pb.parent, -1);
  }
}

TEST(HigherOrder, ZeroProbabilityGivesNoChildren) {
  const BaseTreeLibrary lib = synth_library(8, 3, 30);
  GenParams p;
  p.higher_order_prob = 0.0;
  PlacedBranch primary;
  primary.curve = line({0, 0, 1}, {1, 0, 1}, 0.01, 8);
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    EXPECT_TRUE(generate_higher_order(primary, 0, lib, p, rng).empty());
  }
}

TEST(HigherOrder, ScaledChildMeasurements) {
  BaseTreeLibrary lib;
  lib.branches = {base_branch(1.0, 0.8, 0.012)};
  const OrganCurve base = resample(lib.branches[0].curve, kBranchSamples);
  const double base_len = arc_length(base);
  PlacedBranch parent;
  parent.curve = line({0, 0, 1}, {1, 0, 1}, 0.01, 11);
  parent.curve.radii = {0.01, 0.009, 0.008, 0.007, 0.006, 0.005, 0.004, 0.003, 0.002, 0.0015, 0.001};
  for (double arc : {0.2, 0.5, 0.95}) {
    ChildSpec spec;
    spec.base_index = 0;
    spec.scale = 0.5;
    spec.attach_arc = arc;
    spec.azimuth = 1.0;
    const PlacedBranch child = place_child(parent, 0, lib, spec, 1.0);
    EXPECT_NEAR(arc_length(child.curve), 0.5 * base_len, 1e-9);
    const double parent_r = sample_at_arc(parent.curve, arc).radius;
    EXPECT_LE(child.curve.radii.front(), std::min(0.5 * 0.012, parent_r) + 1e-15);
    EXPECT_TRUE(non_increasing(child.curve.radii));
    EXPECT_EQ(child.order, 2);
    EXPECT_EQ(child.parent, 0);
  }
}

TEST(HigherOrder, AttachmentsLieOnParent) {
  const BaseTreeLibrary lib = synth_library(12, 5, 80);
  GenParams p;
  p.higher_order_prob = 1.0;
  Rng rng(31);
  int children = 0;
  while (children < 1000) {
    const OrganCurve trunk = interpolate_trunk(lib, 3, rng);
    const BaseBranch b = interpolate_branch(lib, rng.uniform(1.0, 2.0), 3, rng);
    const PlacedBranch primary = place_primary(trunk, b);
    for (const auto& c : generate_higher_order(primary, 0, lib, p, rng)) {
      ASSERT_LT(distance_to_polyline(c.curve.centerline.front(), primary.curve), 1e-3);
      ASSERT_GE(c.attach_arc, 0.2 * arc_length(primary.curve) - 1e-12);
      ++children;
    }
  }
}

TEST(Tapering, LinearLawWithTipClamp) {
  OrganCurve c = line({0, 0, 0}, {0, 0, 1}, 0.02, 5);
  const OrganCurve out = apply_tapering(c, 1.0);
  const double expect[] = {0.020, 0.015, 0.010, 0.005, 0.0005};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(out.radii[static_cast<std::size_t>(i)], expect[i], 1e-15) << i;
  EXPECT_EQ(out.centerline, c.centerline);
}

TEST(Tapering, ExponentZeroKeepsMonotoneInput) {
  OrganCurve c = line({0, 0, 0}, {1, 0, 0}, 0.02, 6);
  c.radii = {0.03, 0.025, 0.02, 0.01, 0.002, 0.0001};
  const OrganCurve out = apply_tapering(c, 0.0);
  for (std::size_t i = 0; i + 1 < c.size(); ++i) EXPECT_EQ(out.radii[i], c.radii[i]);
  EXPECT_EQ(out.radii.back(), kMinTipRadius);
}

TEST(Tapering, OutputAlwaysNonIncreasing) {
  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + static_cast<int>(rng.index(30));
    OrganCurve c;
    for (int i = 0; i < n; ++i) {
      c.centerline.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), static_cast<double>(i)});
      c.radii.push_back(rng.uniform(0.0001, 0.05));
    }
    const OrganCurve out = apply_tapering(c, rng.uniform(0.0, 3.0));
    ASSERT_TRUE(non_increasing(out.radii));
    for (std::size_t i = 0; i < out.size(); ++i) ASSERT_GE(out.radii[i], kMinTipRadius);
  }
}

TEST(Collision, SegmentDistanceClosedForms) {
  EXPECT_DOUBLE_EQ(segment_distance({0, 0, 0}, {1, 0, 0}, {0, 0.1, 0}, {1, 0.1, 0}), 0.1);
  EXPECT_DOUBLE_EQ(segment_distance({0, 0, 0}, {1, 0, 0}, {0.5, -1, 0.3}, {0.5, 1, 0.3}), 0.3);
  EXPECT_DOUBLE_EQ(segment_distance({0, 0, 0}, {1, 0, 0}, {3, 0, 4}, {3, 0, 9}), std::sqrt(4.0 + 16.0));
  EXPECT_DOUBLE_EQ(segment_distance({0, 0, 0}, {0, 0, 0}, {0, 3, 4}, {0, 3, 4}), 5.0);
}

TEST(Collision, ParallelBranchesClear) {
  TreeSkeleton tree;
  tree.trunk = vertical(3.0, 4, 0.05, 0.02);
  PlacedBranch a, b;
  a.curve = line({1, 0, 1}, {2, 0, 1}, 0.01);
  b.curve = line({1, 0.1, 1}, {2, 0.1, 1}, 0.01);
  a.attach_arc = b.attach_arc = 1.0;
  tree.branches = {a, b};
  EXPECT_TRUE(collision_test(tree).empty());
  const double clearance = segment_distance(a.curve.centerline[0], a.curve.centerline[1], b.curve.centerline[0],
                                            b.curve.centerline[1]) - 0.02;
  EXPECT_NEAR(clearance, 0.08, 1e-15);
}

TEST(Collision, CrossingPairReported) {
  TreeSkeleton tree;
  tree.trunk = vertical(3.0, 4, 0.05, 0.02);
  PlacedBranch a, b;
  a.curve = line({1, 0, 1}, {2, 0, 1}, 0.01);
  b.curve = line({1.5, -0.5, 1.015}, {1.5, 0.5, 1.015}, 0.01);
  a.attach_arc = b.attach_arc = 1.0;
  tree.branches = {a, b};
  const auto pairs = collision_test(tree);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].organ_a, 1);
  EXPECT_EQ(pairs[0].organ_b, 2);
  EXPECT_EQ(pairs[0].segment_a, 0);
  EXPECT_EQ(pairs[0].segment_b, 0);
  EXPECT_NEAR(pairs[0].clearance, 0.015 - 0.02, 1e-12);
}

TEST(Collision, SingleBranchTreeIsClean) {
  TreeSkeleton tree;
  tree.trunk = vertical(3.0, 16, 0.05, 0.02);
  PlacedBranch a;
  a.curve = line({0, 0, 1.5}, {1, 0, 1.6}, 0.01, 10);
  a.attach_arc = 1.5;
  tree.branches = {a};
  EXPECT_TRUE(collision_test(tree).empty());
}

TEST(GenerateTree, Deterministic) {
  const BaseTreeLibrary lib = synth_library(1, 5, 100);
  const GenParams p;
  EXPECT_EQ(generate_tree(lib, p, 123), generate_tree(lib, p, 123));
  EXPECT_EQ(encode_tree(generate_tree(lib, p, 123)), encode_tree(generate_tree(lib, p, 123)));
  EXPECT_NE(generate_tree(lib, p, 123), generate_tree(lib, p, 124));
}

TEST(GenerateTree, AuditOfHundredTrees) {
  const BaseTreeLibrary lib = synth_library(2024, 5, 200);
  const GenParams p;
  const auto trees = generate_trees(lib, p, 99, 100, 1);
  ASSERT_EQ(trees.size(), 100u);
  for (const auto& t : trees) {
    EXPECT_TRUE(collision_test(t).empty());
    EXPECT_TRUE(non_increasing(t.trunk.radii));
    int primaries = 0;
    for (std::size_t i = 0; i < t.branches.size(); ++i) {
      const auto& b = t.branches[i];
      EXPECT_EQ(b.branch_id, static_cast<int>(i) + 1);
      EXPECT_TRUE(non_increasing(b.curve.radii));
      if (b.order == 1) {
        ++primaries;
        EXPECT_EQ(b.parent, -1);
        EXPECT_LT(distance_to_polyline(b.curve.centerline.front(), t.trunk), 1e-3);
      } else {
        ASSERT_EQ(b.order, 2);
        ASSERT_GE(b.parent, 0);
        ASSERT_LT(b.parent, static_cast<int>(t.branches.size()));
        EXPECT_EQ(t.branches[static_cast<std::size_t>(b.parent)].order, 1);
        EXPECT_LT(distance_to_polyline(b.curve.centerline.front(),
                                       t.branches[static_cast<std::size_t>(b.parent)].curve),
                  1e-3);
      }
    }
    EXPECT_LE(primaries, p.branch_count_max);
    EXPECT_GE(primaries + t.dropped_branches, p.branch_count_min);
  }
}

TEST(GenerateTree, IndependentOfJobCount) {
  const BaseTreeLibrary lib = synth_library(5, 5, 80);
  const GenParams p;
  EXPECT_EQ(generate_trees(lib, p, 7, 12, 1), generate_trees(lib, p, 7, 12, 4));
}

TEST(GenerateTree, InfeasibleLayoutPropagates) {
  const BaseTreeLibrary lib = synth_library(5, 5, 80);
  GenParams p;
  p.branch_count_min = p.branch_count_max = 50;
  p.min_branch_separation = 0.2;
  EXPECT_THROW(generate_tree(lib, p, 1), InfeasibleError);
  p = {};
  p.k1 = 0;
  EXPECT_THROW(generate_tree(lib, p, 1), InvalidArgument);
}

TEST(TreeFile, RoundTrip) {
  const BaseTreeLibrary lib = synth_library(5, 5, 80);
  TreeSkeleton t = generate_tree(lib, GenParams{}, 55);
  t.tree_id = 3;
  const std::string text = encode_tree(t);
  EXPECT_EQ(decode_tree(text), t);
  EXPECT_THROW(decode_tree("[1,2"), ParseError);
}
