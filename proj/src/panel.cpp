#include "orchardsim/panel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "orchardsim/error.hpp"

namespace orchard {

std::string to_string(SamplingMode mode) {
  return mode == SamplingMode::WithReplacement ? "with_replacement" : "without_replacement";
}

SamplingMode sampling_mode_from_string(const std::string& s) {
  if (s == "with_replacement") return SamplingMode::WithReplacement;
  if (s == "without_replacement") return SamplingMode::WithoutReplacement;
  throw ConfigError("unknown sampling mode '" + s + "' (with_replacement|without_replacement)");
}

void validate(const PanelParams& p) {
  if (p.n_trees_min < 1 || p.n_trees_min > p.n_trees_max) throw InvalidArgument("panel params: bad tree count range");
  if (!(p.spacing_min > 0.0 && p.spacing_min <= p.spacing_max)) {
    throw InvalidArgument("panel params: bad spacing range");
  }
  if (std::fabs(norm(p.row_axis) - 1.0) > 1e-9) throw InvalidArgument("panel params: row_axis must be a unit vector");
}

PoolSampler::PoolSampler(std::size_t pool_size, std::uint64_t seed) : pool_size_(pool_size), rng_(seed) {
  if (pool_size == 0) throw InvalidArgument("tree pool is empty");
}

void PoolSampler::refill() {
  deck_.resize(pool_size_);
  std::iota(deck_.begin(), deck_.end(), 0);
  for (std::size_t i = deck_.size(); i > 1; --i) std::swap(deck_[i - 1], deck_[rng_.index(i)]);
}

std::vector<std::size_t> PoolSampler::draw(std::size_t n, SamplingMode mode) {
  if (mode == SamplingMode::WithoutReplacement && pool_size_ < n) {
    throw InvalidArgument("sampling without replacement needs a pool of at least " + std::to_string(n) +
                          " trees, have " + std::to_string(pool_size_));
  }
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (deck_.empty()) refill();
    if (mode == SamplingMode::WithoutReplacement) {
      // Prefer the deck top; skip members already in this panel.
      auto used = [&](std::size_t m) { return std::find(out.begin(), out.end(), m) != out.end(); };
      std::size_t pos = deck_.size();
      while (pos > 0 && used(deck_[pos - 1])) --pos;
      if (pos == 0) {
        // Every remaining deck member is already in the panel: start a new
        // cycle early, carrying the leftovers to the front of it.
        std::vector<std::size_t> left = deck_;
        refill();
        std::erase_if(deck_, [&](std::size_t m) { return std::find(left.begin(), left.end(), m) != left.end(); });
        deck_.insert(deck_.begin(), left.begin(), left.end());
        pos = deck_.size();
        while (pos > 0 && used(deck_[pos - 1])) --pos;
      }
      std::swap(deck_[pos - 1], deck_.back());
    }
    out.push_back(deck_.back());
    deck_.pop_back();
  }
  return out;
}

PanelLayout plan_panel(PoolSampler& sampler, const PanelParams& params, Rng& rng) {
  validate(params);
  PanelLayout layout;
  layout.n_trees = static_cast<int>(rng.uniform_int(params.n_trees_min, params.n_trees_max));
  for (int k = 0; k + 1 < layout.n_trees; ++k) {
    layout.spacings.push_back(rng.uniform(params.spacing_min, params.spacing_max));
  }
  layout.row_axis = params.row_axis;
  layout.sampling_mode = params.mode;
  layout.tree_refs = sampler.draw(static_cast<std::size_t>(layout.n_trees), params.mode);
  return layout;
}

PanelSkeleton build_panel(const PanelLayout& layout, std::span<const TreeSkeleton> pool) {
  if (layout.tree_refs.size() != static_cast<std::size_t>(layout.n_trees) ||
      layout.spacings.size() + 1 != layout.tree_refs.size()) {
    throw InvalidArgument("panel layout: inconsistent tree and spacing counts");
  }
  PanelSkeleton panel;
  Vec3 pos{};
  int next_branch_id = 1;
  for (std::size_t k = 0; k < layout.tree_refs.size(); ++k) {
    if (k > 0) pos += layout.row_axis * layout.spacings[k - 1];
    if (layout.tree_refs[k] >= pool.size()) throw InvalidArgument("panel layout: tree ref out of range");
    TreeSkeleton t = pool[layout.tree_refs[k]];
    const Vec3 offset = pos - t.trunk.centerline.front();
    for (auto& p : t.trunk.centerline) p += offset;
    for (auto& b : t.branches) {
      for (auto& p : b.curve.centerline) p += offset;
      b.branch_id = next_branch_id++;
    }
    t.tree_id = static_cast<int>(k) + 1;
    panel.positions.push_back(pos);
    panel.trees.push_back(std::move(t));
  }
  return panel;
}

PanelLayout assemble_panel(std::span<const TreeSkeleton> pool, const PanelParams& params, Rng& rng,
                           PanelSkeleton& panel) {
  PoolSampler sampler(pool.size(), rng.next_u64());
  PanelLayout layout = plan_panel(sampler, params, rng);
  panel = build_panel(layout, pool);
  return layout;
}

namespace {

struct SurfaceSegment {
  Vec3 a, b;
  double ra, rb;
  Semantic semantic;
  int tree_id;
  int branch_id;
};

double frustum_area(const SurfaceSegment& s) {
  const double len = distance(s.a, s.b);
  const double slant = std::sqrt(len * len + (s.ra - s.rb) * (s.ra - s.rb));
  return kPi * (s.ra + s.rb) * slant;
}

std::vector<SurfaceSegment> collect_segments(const PanelSkeleton& panel) {
  std::vector<SurfaceSegment> segs;
  auto add = [&](const OrganCurve& c, Semantic sem, int tree_id, int branch_id) {
    for (std::size_t i = 0; i + 1 < c.size(); ++i) {
      if (c.centerline[i] == c.centerline[i + 1]) continue;
      segs.push_back({c.centerline[i], c.centerline[i + 1], c.radii[i], c.radii[i + 1], sem, tree_id, branch_id});
    }
  };
  for (const auto& t : panel.trees) {
    add(t.trunk, Semantic::Trunk, t.tree_id, 0);
    for (const auto& b : t.branches) add(b.curve, Semantic::Branch, t.tree_id, b.branch_id);
  }
  return segs;
}

}  // namespace

double panel_surface_area(const PanelSkeleton& panel) {
  double total = 0.0;
  for (const auto& s : collect_segments(panel)) total += frustum_area(s);
  return total;
}

LabeledPointCloud panel_to_cloud(const PanelSkeleton& panel, double density, std::uint64_t seed) {
  if (!(density > 0.0) || !std::isfinite(density)) throw InvalidArgument("panel_to_cloud: density must be > 0");
  const std::vector<SurfaceSegment> segs = collect_segments(panel);
  std::vector<double> cumulative(segs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    total += frustum_area(segs[i]);
    cumulative[i] = total;
  }

  LabeledPointCloud cloud;
  cloud.seed = seed;
  cloud.generator = "orchardsim surface-sampler density=" + std::to_string(density);
  if (segs.empty()) return cloud;

  const auto n = static_cast<std::size_t>(std::llround(total * density));
  cloud.points.reserve(n);
  Rng rng(seed);
  for (std::size_t k = 0; k < n; ++k) {
    const double pick = rng.uniform() * total;
    const std::size_t i = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin()),
        segs.size() - 1);
    const SurfaceSegment& s = segs[i];
    // Area along the frustum axis grows linearly with the radius; invert its CDF.
    const double y = rng.uniform();
    const double mean_r = 0.5 * (s.ra + s.rb);
    const double a = 0.5 * (s.rb - s.ra);
    const double t = 2.0 * y * mean_r / (s.ra + std::sqrt(s.ra * s.ra + 4.0 * a * y * mean_r));
    const double theta = rng.uniform(0.0, kTwoPi);
    const Vec3 axis = normalized(s.b - s.a);
    Vec3 u, v;
    orthonormal_basis(axis, u, v);
    const double r = s.ra + (s.rb - s.ra) * t;
    const Vec3 p = s.a + (s.b - s.a) * t + (u * std::cos(theta) + v * std::sin(theta)) * r;

    LabeledPoint lp;
    lp.position = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
    lp.semantic = s.semantic;
    lp.tree_id = s.tree_id;
    lp.branch_id = s.branch_id;
    cloud.points.push_back(lp);
  }
  return cloud;
}

}  // namespace orchard
