#include "orchardsim/treegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "orchardsim/error.hpp"
#include "orchardsim/parallel.hpp"

namespace orchard {

using Json = nlohmann::ordered_json;

namespace {
constexpr double kChildForwardAngle = deg_to_rad(40.0);
constexpr double kAttachExclusionFraction = 0.1;
constexpr double kChildMinArcFraction = 0.2;
}  // namespace

void validate(const GenParams& p) {
  if (p.k1 < 1 || p.k2 < 1) throw InvalidArgument("gen params: k1 and k2 must be >= 1");
  if (p.branch_count_min < 0 || p.branch_count_min > p.branch_count_max) {
    throw InvalidArgument("gen params: invalid branch_count range");
  }
  if (!(0.0 <= p.branch_zone_low && p.branch_zone_low < p.branch_zone_high && p.branch_zone_high <= 1.0)) {
    throw InvalidArgument("gen params: branch zone must satisfy 0 <= low < high <= 1");
  }
  if (!(p.min_branch_separation >= 0.0)) throw InvalidArgument("gen params: negative branch separation");
  if (!(p.higher_order_prob >= 0.0 && p.higher_order_prob <= 1.0)) {
    throw InvalidArgument("gen params: higher_order_prob must be in [0,1]");
  }
  if (!(0.0 < p.higher_order_scale_min && p.higher_order_scale_min <= p.higher_order_scale_max &&
        p.higher_order_scale_max <= 1.0)) {
    throw InvalidArgument("gen params: higher-order scale range must lie within (0,1]");
  }
  if (p.collision_retries < 0 || p.height_retries < 1) throw InvalidArgument("gen params: bad retry counts");
  if (!(p.taper_exponent >= 0.0) || !std::isfinite(p.taper_exponent)) {
    throw InvalidArgument("gen params: taper_exponent must be >= 0");
  }
}

// ---------------------------------------------------------------------------
// Curve utilities

OrganCurve resample(const OrganCurve& curve, int m) {
  if (m < 2) throw InvalidArgument("resample: need at least 2 samples");
  const std::vector<double> s = cumulative_arc_length(curve);
  const double total = s.back();
  if (!(total > 0.0)) throw InvalidArgument("resample: zero-length curve");

  OrganCurve out;
  out.kind = curve.kind;
  out.centerline.reserve(static_cast<std::size_t>(m));
  out.radii.reserve(static_cast<std::size_t>(m));
  std::size_t seg = 0;
  for (int k = 0; k < m; ++k) {
    if (k == 0) {
      out.centerline.push_back(curve.centerline.front());
      out.radii.push_back(curve.radii.front());
      continue;
    }
    if (k == m - 1) {
      out.centerline.push_back(curve.centerline.back());
      out.radii.push_back(curve.radii.back());
      continue;
    }
    const double target = total * static_cast<double>(k) / (m - 1);
    while (seg + 2 < s.size() && s[seg + 1] < target) ++seg;
    const double len = s[seg + 1] - s[seg];
    const double f = len > 0.0 ? std::clamp((target - s[seg]) / len, 0.0, 1.0) : 0.0;
    const Vec3& a = curve.centerline[seg];
    const Vec3& b = curve.centerline[seg + 1];
    out.centerline.push_back(a + (b - a) * f);
    out.radii.push_back(curve.radii[seg] + (curve.radii[seg + 1] - curve.radii[seg]) * f);
  }
  return out;
}

OrganCurve blend(std::span<const OrganCurve> curves, std::span<const double> weights) {
  if (curves.empty() || curves.size() != weights.size()) {
    throw InvalidArgument("blend: need matching non-empty curves and weights");
  }
  const std::size_t m = curves.front().size();
  OrganCurve out;
  out.kind = curves.front().kind;
  out.centerline.assign(m, Vec3{});
  out.radii.assign(m, 0.0);
  for (std::size_t j = 0; j < curves.size(); ++j) {
    if (curves[j].size() != m) throw InvalidArgument("blend: sample counts differ");
    for (std::size_t i = 0; i < m; ++i) {
      out.centerline[i] += curves[j].centerline[i] * weights[j];
      out.radii[i] += curves[j].radii[i] * weights[j];
    }
  }
  return out;
}

CurveSample sample_at_arc(const OrganCurve& curve, double s) {
  const std::vector<double> cum = cumulative_arc_length(curve);
  s = std::clamp(s, 0.0, cum.back());
  std::size_t i = 0;
  while (i + 2 < cum.size() && cum[i + 1] < s) ++i;
  const double len = cum[i + 1] - cum[i];
  const double f = len > 0.0 ? std::clamp((s - cum[i]) / len, 0.0, 1.0) : 0.0;
  const Vec3& a = curve.centerline[i];
  const Vec3& b = curve.centerline[i + 1];
  return {a + (b - a) * f, normalized(b - a), curve.radii[i] + (curve.radii[i + 1] - curve.radii[i]) * f};
}

double trunk_height(const OrganCurve& trunk) {
  double top = trunk.centerline.front().z;
  for (const auto& p : trunk.centerline) top = std::max(top, p.z);
  return top - trunk.centerline.front().z;
}

namespace {

// Locates height h on the trunk; returns position and arc length there.
Vec3 locate_height(const OrganCurve& trunk, double h, double& arc) {
  const double target = trunk.centerline.front().z + h;
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < trunk.size(); ++i) {
    const Vec3& a = trunk.centerline[i];
    const Vec3& b = trunk.centerline[i + 1];
    const double len = distance(a, b);
    const double lo = std::min(a.z, b.z);
    const double hi = std::max(a.z, b.z);
    if (target >= lo && target <= hi) {
      const double f = hi > lo ? (target - a.z) / (b.z - a.z) : 0.0;
      arc = s + len * f;
      return a + (b - a) * f;
    }
    s += len;
  }
  if (target < trunk.centerline.front().z) {
    arc = 0.0;
    return trunk.centerline.front();
  }
  arc = s;
  return trunk.centerline.back();
}

}  // namespace

Vec3 trunk_point_at_height(const OrganCurve& trunk, double h) {
  double arc = 0.0;
  return locate_height(trunk, h, arc);
}

// ---------------------------------------------------------------------------
// Organ generator

OrganCurve interpolate_trunk(const BaseTreeLibrary& lib, std::span<const std::size_t> indices,
                             std::span<const double> weights) {
  if (indices.empty() || indices.size() != weights.size()) {
    throw InvalidArgument("interpolate_trunk: indices and weights must match");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw InvalidArgument("interpolate_trunk: weights must be positive");
    sum += w;
  }
  std::vector<OrganCurve> curves;
  std::vector<double> norm_w;
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] >= lib.trunks.size()) throw InvalidArgument("interpolate_trunk: index out of range");
    curves.push_back(resample(lib.trunks[indices[j]], kTrunkSamples));
    norm_w.push_back(indices.size() == 1 ? 1.0 : weights[j] / sum);
  }
  OrganCurve out = blend(curves, norm_w);
  out.kind = OrganKind::Trunk;
  return out;
}

OrganCurve interpolate_trunk(const BaseTreeLibrary& lib, int k1, Rng& rng) {
  if (k1 < 1) throw InvalidArgument("interpolate_trunk: k1 must be >= 1");
  if (lib.trunks.size() < static_cast<std::size_t>(k1)) {
    throw InvalidArgument("interpolate_trunk: library has " + std::to_string(lib.trunks.size()) +
                          " trunks, fewer than k1=" + std::to_string(k1));
  }
  std::vector<std::size_t> pool(lib.trunks.size());
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<std::size_t> chosen;
  std::vector<double> weights;
  for (int j = 0; j < k1; ++j) {
    const std::size_t pick = static_cast<std::size_t>(j) + rng.index(pool.size() - static_cast<std::size_t>(j));
    std::swap(pool[static_cast<std::size_t>(j)], pool[pick]);
    chosen.push_back(pool[static_cast<std::size_t>(j)]);
    weights.push_back(1.0 - rng.uniform());  // (0, 1]
  }
  return interpolate_trunk(lib, chosen, weights);
}

std::vector<double> sample_branch_heights(const OrganCurve& trunk, const GenParams& params, Rng& rng) {
  if (!(0.0 <= params.branch_zone_low && params.branch_zone_low < params.branch_zone_high &&
        params.branch_zone_high <= 1.0)) {
    throw InvalidArgument("sample_branch_heights: invalid branch zone");
  }
  const int n = static_cast<int>(rng.uniform_int(params.branch_count_min, params.branch_count_max));
  const double height = trunk_height(trunk);
  const double lo = params.branch_zone_low * height;
  const double hi = params.branch_zone_high * height;
  const double sep = params.min_branch_separation;
  if (n > 1 && (n - 1) * sep > hi - lo) throw InfeasibleError("infeasible branch layout");

  std::vector<double> heights;
  heights.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < params.height_retries && !placed; ++attempt) {
      const double h = rng.uniform(lo, hi);
      const bool clear = std::all_of(heights.begin(), heights.end(),
                                     [&](double o) { return std::fabs(o - h) >= sep; });
      if (clear) {
        heights.push_back(h);
        placed = true;
      }
    }
    if (!placed) throw InfeasibleError("infeasible branch layout");
  }
  std::sort(heights.begin(), heights.end());
  return heights;
}

void nearest_branch_weights(const BaseTreeLibrary& lib, double attach_height, int k2,
                            std::vector<std::size_t>& indices, std::vector<double>& weights) {
  if (k2 < 1) throw InvalidArgument("interpolate_branch: k2 must be >= 1");
  if (lib.branches.size() < static_cast<std::size_t>(k2)) {
    throw InvalidArgument("interpolate_branch: library has " + std::to_string(lib.branches.size()) +
                          " branches, fewer than k2=" + std::to_string(k2));
  }
  std::vector<std::size_t> order(lib.branches.size());
  std::iota(order.begin(), order.end(), 0);
  auto dh = [&](std::size_t i) { return std::fabs(attach_height - lib.branches[i].attach_height); };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dh(a) < dh(b); });
  indices.assign(order.begin(), order.begin() + k2);
  weights.clear();
  double sum = 0.0;
  for (std::size_t i : indices) {
    weights.push_back(1.0 / (kHeightWeightEps + dh(i)));
    sum += weights.back();
  }
  for (double& w : weights) w /= sum;
}

BaseBranch interpolate_branch(const BaseTreeLibrary& lib, double attach_height, int k2, Rng& rng) {
  std::vector<std::size_t> idx;
  std::vector<double> w;
  nearest_branch_weights(lib, attach_height, k2, idx, w);
  std::vector<OrganCurve> curves;
  for (std::size_t i : idx) curves.push_back(resample(lib.branches[i].curve, kBranchSamples));
  if (idx.size() == 1) w[0] = 1.0;
  BaseBranch out;
  out.curve = blend(curves, w);
  out.curve.kind = OrganKind::Branch;
  out.attach_height = attach_height;
  out.azimuth = rng.uniform(0.0, kTwoPi);
  return out;
}

PlacedBranch place_primary(const OrganCurve& trunk, const BaseBranch& branch) {
  PlacedBranch out;
  const Vec3 anchor = locate_height(trunk, branch.attach_height, out.attach_arc);
  out.curve.kind = OrganKind::Branch;
  out.curve.radii = branch.curve.radii;
  out.curve.centerline.reserve(branch.curve.size());
  for (const auto& p : branch.curve.centerline) {
    out.curve.centerline.push_back(anchor + rotate_z(p, branch.azimuth));
  }
  out.order = 1;
  out.parent = -1;
  return out;
}

// ---------------------------------------------------------------------------
// Branch hierarchy generator

std::vector<ChildSpec> draw_children(const PlacedBranch& primary, const BaseTreeLibrary& lib,
                                     const GenParams& params, Rng& rng) {
  std::vector<ChildSpec> specs;
  if (lib.branches.empty() || !rng.bernoulli(params.higher_order_prob)) return specs;
  const double length = arc_length(primary.curve);
  const int count = static_cast<int>(rng.uniform_int(1, 2));
  for (int k = 0; k < count; ++k) {
    ChildSpec s;
    s.base_index = rng.index(lib.branches.size());
    s.scale = rng.uniform(params.higher_order_scale_min, params.higher_order_scale_max);
    s.attach_arc = rng.uniform(kChildMinArcFraction * length, length);
    s.azimuth = rng.uniform(0.0, kTwoPi);
    specs.push_back(s);
  }
  return specs;
}

PlacedBranch place_child(const PlacedBranch& parent, int parent_index, const BaseTreeLibrary& lib,
                         const ChildSpec& spec, double taper_exponent) {
  const OrganCurve local = resample(lib.branches.at(spec.base_index).curve, kBranchSamples);
  const CurveSample at = sample_at_arc(parent.curve, spec.attach_arc);

  Vec3 u, v;
  orthonormal_basis(at.tangent, u, v);
  const Vec3 out_dir = u * std::cos(spec.azimuth) + v * std::sin(spec.azimuth);
  const Vec3 ex = normalized(out_dir * std::cos(kChildForwardAngle) + at.tangent * std::sin(kChildForwardAngle));
  Vec3 ez = Vec3{0.0, 0.0, 1.0} - ex * ex.z;
  if (norm(ez) < 1e-6) ez = at.tangent - ex * dot(at.tangent, ex);
  ez = normalized(ez);
  const Vec3 ey = cross(ez, ex);

  PlacedBranch child;
  child.order = 2;
  child.parent = parent_index;
  child.attach_arc = spec.attach_arc;
  child.curve.kind = OrganKind::Branch;
  for (std::size_t i = 0; i < local.size(); ++i) {
    const Vec3 p = local.centerline[i] * spec.scale;
    child.curve.centerline.push_back(at.position + ex * p.x + ey * p.y + ez * p.z);
    child.curve.radii.push_back(std::min(local.radii[i] * spec.scale, at.radius));
  }
  child.curve = apply_tapering(child.curve, taper_exponent);
  return child;
}

std::vector<PlacedBranch> generate_higher_order(const PlacedBranch& primary, int primary_index,
                                                const BaseTreeLibrary& lib, const GenParams& params,
                                                Rng& rng) {
  std::vector<PlacedBranch> out;
  if (!(arc_length(primary.curve) > 0.0)) throw InvalidArgument("generate_higher_order: zero-length primary");
  for (const ChildSpec& s : draw_children(primary, lib, params, rng)) {
    out.push_back(place_child(primary, primary_index, lib, s, params.taper_exponent));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Constraints

OrganCurve apply_tapering(const OrganCurve& organ, double taper_exponent) {
  OrganCurve out = organ;
  const std::vector<double> s = cumulative_arc_length(organ);
  const double total = s.back();
  const double base = organ.radii.front();
  double running = base;
  for (std::size_t i = 0; i < organ.size(); ++i) {
    running = std::min(running, organ.radii[i]);
    const double frac = total > 0.0 ? std::clamp(1.0 - s[i] / total, 0.0, 1.0) : 1.0;
    const double law = base * std::pow(frac, taper_exponent);
    out.radii[i] = std::max(std::min(running, law), kMinTipRadius);
  }
  return out;
}

double segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1) {
  // Closest points of two segments (Ericson, Real-Time Collision Detection 5.1.9).
  const Vec3 d1 = p1 - p0;
  const Vec3 d2 = q1 - q0;
  const Vec3 r = p0 - q0;
  const double a = dot(d1, d1);
  const double e = dot(d2, d2);
  const double f = dot(d2, r);
  constexpr double kTiny = 1e-300;
  double s = 0.0;
  double t = 0.0;
  if (a <= kTiny && e <= kTiny) return norm(r);
  if (a <= kTiny) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = dot(d1, r);
    if (e <= kTiny) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = dot(d1, d2);
      const double denom = a * e - b * b;
      s = denom > 0.0 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return distance(p0 + d1 * s, q0 + d2 * t);
}

namespace {

struct OrganView {
  const OrganCurve* curve = nullptr;
  int parent_organ = -1;  // organ index of the parent, -1 for the trunk
  double attach_arc = 0.0;
  std::vector<double> arc;  // cumulative arc length
  Aabb bounds;              // padded by the maximum radius
};

OrganView make_view(const OrganCurve& c, int parent_organ, double attach_arc) {
  OrganView v;
  v.curve = &c;
  v.parent_organ = parent_organ;
  v.attach_arc = attach_arc;
  v.arc = cumulative_arc_length(c);
  double rmax = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    v.bounds.expand(c.centerline[i]);
    rmax = std::max(rmax, c.radii[i]);
  }
  v.bounds.lo -= Vec3{rmax, rmax, rmax};
  v.bounds.hi += Vec3{rmax, rmax, rmax};
  return v;
}

bool overlap(const Aabb& a, const Aabb& b) {
  return a.lo.x <= b.hi.x && b.lo.x <= a.hi.x && a.lo.y <= b.hi.y && b.lo.y <= a.hi.y &&
         a.lo.z <= b.hi.z && b.lo.z <= a.hi.z;
}

// Pairs of capsules of organs a and b whose surfaces interpenetrate.
void organ_pair(const OrganView& a, int ia, const OrganView& b, int ib, bool first_only,
                std::vector<CollisionPair>& out) {
  if (!overlap(a.bounds, b.bounds)) return;
  // Parent-child exclusion zone around the attachment.
  const OrganView* parent = nullptr;
  const OrganView* child = nullptr;
  bool a_is_parent = false;
  if (b.parent_organ == ia) {
    parent = &a;
    child = &b;
    a_is_parent = true;
  } else if (a.parent_organ == ib) {
    parent = &b;
    child = &a;
  }
  const OrganCurve& ca = *a.curve;
  const OrganCurve& cb = *b.curve;
  for (std::size_t i = 0; i + 1 < ca.size(); ++i) {
    const double ra = std::max(ca.radii[i], ca.radii[i + 1]);
    for (std::size_t j = 0; j + 1 < cb.size(); ++j) {
      if (parent != nullptr) {
        const std::size_t pi = a_is_parent ? i : j;
        const std::size_t ci = a_is_parent ? j : i;
        const double lp = parent->arc.back();
        const double lc = child->arc.back();
        const bool child_near_base = child->arc[ci] <= kAttachExclusionFraction * lc;
        const bool parent_near_attach =
            parent->arc[pi] <= child->attach_arc + kAttachExclusionFraction * lp &&
            parent->arc[pi + 1] >= child->attach_arc - kAttachExclusionFraction * lp;
        if (child_near_base || parent_near_attach) continue;
      }
      const double rb = std::max(cb.radii[j], cb.radii[j + 1]);
      const double d = segment_distance(ca.centerline[i], ca.centerline[i + 1], cb.centerline[j],
                                        cb.centerline[j + 1]);
      const double clearance = d - ra - rb;
      if (clearance < 0.0) {
        out.push_back({ia, static_cast<int>(i), ib, static_cast<int>(j), clearance});
        if (first_only) return;
      }
    }
  }
}

std::vector<OrganView> views_of(const TreeSkeleton& tree) {
  std::vector<OrganView> v;
  v.reserve(tree.branches.size() + 1);
  v.push_back(make_view(tree.trunk, -1, 0.0));
  for (const auto& b : tree.branches) v.push_back(make_view(b.curve, b.parent + 1, b.attach_arc));
  return v;
}

bool collides_with(const std::vector<OrganView>& organs, const PlacedBranch& candidate) {
  const int idx = static_cast<int>(organs.size());
  const OrganView cv = make_view(candidate.curve, candidate.parent + 1, candidate.attach_arc);
  std::vector<CollisionPair> hits;
  for (int o = 0; o < idx; ++o) {
    organ_pair(organs[static_cast<std::size_t>(o)], o, cv, idx, true, hits);
    if (!hits.empty()) return true;
  }
  return false;
}

}  // namespace

std::vector<CollisionPair> collision_test(const TreeSkeleton& tree) {
  const std::vector<OrganView> organs = views_of(tree);
  std::vector<CollisionPair> out;
  for (std::size_t a = 0; a < organs.size(); ++a) {
    for (std::size_t b = a + 1; b < organs.size(); ++b) {
      organ_pair(organs[a], static_cast<int>(a), organs[b], static_cast<int>(b), false, out);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// End to end

TreeSkeleton generate_tree(const BaseTreeLibrary& lib, const GenParams& params, std::uint64_t seed) {
  validate(params);
  Rng rng(seed);
  TreeSkeleton tree;
  tree.seed = seed;
  tree.trunk = apply_tapering(interpolate_trunk(lib, params.k1, rng), params.taper_exponent);

  std::vector<OrganView> organs;
  organs.push_back(make_view(tree.trunk, -1, 0.0));
  auto accept = [&](PlacedBranch b) {
    tree.branches.push_back(std::move(b));
    // Views point into tree.branches; rebuild after reallocation.
    organs = views_of(tree);
  };
  tree.branches.reserve(64);

  for (double h : sample_branch_heights(tree.trunk, params, rng)) {
    BaseBranch base = interpolate_branch(lib, h, params.k2, rng);
    base.curve = apply_tapering(base.curve, params.taper_exponent);
    bool placed = false;
    for (int attempt = 0; attempt <= params.collision_retries && !placed; ++attempt) {
      if (attempt > 0) base.azimuth = rng.uniform(0.0, kTwoPi);
      PlacedBranch pb = place_primary(tree.trunk, base);
      if (!collides_with(organs, pb)) {
        accept(std::move(pb));
        placed = true;
      }
    }
    if (!placed) ++tree.dropped_branches;
  }

  const std::size_t primaries = tree.branches.size();
  for (std::size_t i = 0; i < primaries; ++i) {
    const std::vector<ChildSpec> specs = draw_children(tree.branches[i], lib, params, rng);
    for (ChildSpec spec : specs) {
      bool placed = false;
      for (int attempt = 0; attempt <= params.collision_retries && !placed; ++attempt) {
        if (attempt > 0) spec.azimuth = rng.uniform(0.0, kTwoPi);
        PlacedBranch child = place_child(tree.branches[i], static_cast<int>(i), lib, spec, params.taper_exponent);
        if (!collides_with(organs, child)) {
          accept(std::move(child));
          placed = true;
        }
      }
      if (!placed) ++tree.dropped_branches;
    }
  }

  for (std::size_t i = 0; i < tree.branches.size(); ++i) tree.branches[i].branch_id = static_cast<int>(i) + 1;
  return tree;
}

std::uint64_t tree_seed(std::uint64_t master_seed, std::size_t index) {
  return derive_seed(master_seed, index, 3);
}

std::vector<TreeSkeleton> generate_trees(const BaseTreeLibrary& lib, const GenParams& params,
                                         std::uint64_t master_seed, std::size_t count, int jobs) {
  validate(params);
  std::vector<TreeSkeleton> trees(count);
  parallel_for(count, jobs, [&](std::size_t i) { trees[i] = generate_tree(lib, params, tree_seed(master_seed, i)); });
  return trees;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

Json curve_json(const OrganCurve& c) {
  Json pts = Json::array();
  for (const auto& p : c.centerline) pts.push_back({p.x, p.y, p.z});
  return Json{{"centerline", std::move(pts)}, {"radii", c.radii}};
}

OrganCurve curve_from(const Json& j, OrganKind kind, const std::string& where) {
  OrganCurve c;
  c.kind = kind;
  try {
    for (const auto& p : j.at("centerline")) {
      c.centerline.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    }
    c.radii = j.at("radii").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
  try {
    validate(c, where);
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
  return c;
}

}  // namespace

std::string encode_tree(const TreeSkeleton& tree) {
  Json j;
  j["version"] = 1;
  j["seed"] = tree.seed;
  j["tree_id"] = tree.tree_id;
  j["dropped_branches"] = tree.dropped_branches;
  j["trunk"] = curve_json(tree.trunk);
  j["branches"] = Json::array();
  for (const auto& b : tree.branches) {
    Json e;
    e["branch_id"] = b.branch_id;
    e["order"] = b.order;
    e["parent"] = b.parent;
    e["attach_arc"] = b.attach_arc;
    const Json c = curve_json(b.curve);
    e["centerline"] = c["centerline"];
    e["radii"] = c["radii"];
    j["branches"].push_back(std::move(e));
  }
  return j.dump(1) + "\n";
}

TreeSkeleton decode_tree(const std::string& text) {
  TreeSkeleton t;
  try {
    const Json j = Json::parse(text);
    if (j.at("version").get<int>() != 1) throw ParseError("tree: unsupported version");
    t.seed = j.at("seed").get<std::uint64_t>();
    t.tree_id = j.at("tree_id").get<int>();
    t.dropped_branches = j.at("dropped_branches").get<int>();
    t.trunk = curve_from(j.at("trunk"), OrganKind::Trunk, "trunk");
    const Json& branches = j.at("branches");
    for (std::size_t i = 0; i < branches.size(); ++i) {
      const Json& e = branches[i];
      PlacedBranch b;
      b.branch_id = e.at("branch_id").get<int>();
      b.order = e.at("order").get<int>();
      b.parent = e.at("parent").get<int>();
      b.attach_arc = e.at("attach_arc").get<double>();
      b.curve = curve_from(e, OrganKind::Branch, "branches[" + std::to_string(i) + "]");
      if (b.parent >= static_cast<int>(i) || b.parent < -1) {
        throw ParseError("branches[" + std::to_string(i) + "].parent: invalid parent index");
      }
      t.branches.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("tree: ") + e.what());
  }
  return t;
}

void save_tree(const TreeSkeleton& tree, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << encode_tree(tree);
  if (!f) throw IoError("write failed: " + path.string());
}

TreeSkeleton load_tree(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return decode_tree(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace orchard
