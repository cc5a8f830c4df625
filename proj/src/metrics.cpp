#include "orchardsim/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "orchardsim/error.hpp"
#include "orchardsim/io.hpp"

namespace orchard {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool disjoint(const std::vector<GtInstance>& gt, std::size_t n_points, std::vector<std::int32_t>& owner) {
  owner.assign(n_points, -1);
  for (std::size_t g = 0; g < gt.size(); ++g) {
    for (std::uint32_t i : gt[g].indices) {
      if (owner[i] != -1) return false;
      owner[i] = static_cast<std::int32_t>(g);
    }
  }
  return true;
}

std::size_t sorted_intersection(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  std::size_t i = 0, j = 0, n = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

std::size_t max_index_plus_one(const std::vector<GtInstance>& gt, const std::vector<std::vector<std::uint32_t>>& pred) {
  std::size_t n = 0;
  for (const auto& g : gt) {
    if (!g.indices.empty()) n = std::max<std::size_t>(n, g.indices.back() + 1u);
  }
  for (const auto& p : pred) {
    if (!p.empty()) n = std::max<std::size_t>(n, p.back() + 1u);
  }
  return n;
}

/// inter[p][g] intersection counts between prediction masks and gt instances.
std::vector<std::vector<std::size_t>> intersections(const std::vector<GtInstance>& gt,
                                                    const std::vector<std::vector<std::uint32_t>>& pred) {
  std::vector<std::vector<std::size_t>> inter(pred.size(), std::vector<std::size_t>(gt.size(), 0));
  std::vector<std::int32_t> owner;
  if (disjoint(gt, max_index_plus_one(gt, pred), owner)) {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      for (std::uint32_t i : pred[p]) {
        if (owner[i] >= 0) ++inter[p][static_cast<std::size_t>(owner[i])];
      }
    }
  } else {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      for (std::size_t g = 0; g < gt.size(); ++g) inter[p][g] = sorted_intersection(pred[p], gt[g].indices);
    }
  }
  return inter;
}

struct Frac {
  std::uint64_t num;
  std::uint64_t den;
};

bool frac_greater(Frac a, Frac b) {
  return static_cast<unsigned __int128>(a.num) * b.den > static_cast<unsigned __int128>(b.num) * a.den;
}

}  // namespace

std::string to_string(Task task) { return task == Task::P2T ? "P2T" : "P2B"; }

void validate(const PredictionSet& pred, std::size_t n_points) {
  if (pred.semantic.size() != n_points) {
    throw InvalidArgument("prediction: " + std::to_string(pred.semantic.size()) + " semantic labels for " +
                          std::to_string(n_points) + " points");
  }
  for (std::size_t i = 0; i < pred.semantic.size(); ++i) {
    if (pred.semantic[i] >= kNumSemanticClasses) {
      throw InvalidArgument("prediction: point " + std::to_string(i) + " has unknown semantic class " +
                            std::to_string(pred.semantic[i]));
    }
  }
  for (std::size_t k = 0; k < pred.instances.size(); ++k) {
    const InstanceMask& m = pred.instances[k];
    const std::string where = "prediction: instance " + std::to_string(k);
    if (m.cls >= kNumInstanceClasses) throw InvalidArgument(where + ": unknown class " + std::to_string(m.cls));
    if (!std::isfinite(m.score) || m.score < 0.0 || m.score > 1.0) {
      throw InvalidArgument(where + ": score must be finite and in [0, 1]");
    }
    for (std::size_t j = 0; j < m.indices.size(); ++j) {
      if (m.indices[j] >= n_points) throw InvalidArgument(where + ": point index out of range");
      if (j > 0 && m.indices[j] <= m.indices[j - 1]) {
        throw InvalidArgument(where + ": point indices must be strictly ascending");
      }
    }
  }
}

std::vector<GtInstance> gt_instances(const LabeledPointCloud& cloud, Task task) {
  std::map<std::pair<std::int32_t, std::int32_t>, std::vector<std::uint32_t>> groups;
  for (std::uint32_t i = 0; i < cloud.points.size(); ++i) {
    const LabeledPoint& p = cloud.points[i];
    if (task == Task::P2T) {
      groups[{p.tree_id, 0}].push_back(i);
    } else if (p.semantic == Semantic::Branch && p.branch_id > 0) {
      groups[{p.tree_id, p.branch_id}].push_back(i);
    }
  }
  const auto cls = static_cast<std::uint8_t>(task == Task::P2T ? InstanceClass::Tree : InstanceClass::Branch);
  std::vector<GtInstance> out;
  out.reserve(groups.size());
  for (auto& [key, idx] : groups) out.push_back({cls, std::move(idx)});
  return out;
}

std::vector<GtInstance> gt_trunk_segments(const LabeledPointCloud& cloud) {
  std::map<std::int32_t, std::vector<std::uint32_t>> groups;
  for (std::uint32_t i = 0; i < cloud.points.size(); ++i) {
    if (cloud.points[i].semantic == Semantic::Trunk) groups[cloud.points[i].tree_id].push_back(i);
  }
  std::vector<GtInstance> out;
  for (auto& [tree, idx] : groups) out.push_back({static_cast<std::uint8_t>(InstanceClass::Trunk), std::move(idx)});
  return out;
}

PredictionSet prediction_from_ground_truth(const LabeledPointCloud& cloud) {
  PredictionSet pred;
  pred.semantic.reserve(cloud.size());
  for (const auto& p : cloud.points) pred.semantic.push_back(static_cast<std::uint8_t>(p.semantic));
  for (auto& g : gt_trunk_segments(cloud)) pred.instances.push_back({g.cls, 1.0, std::move(g.indices)});
  for (auto& g : gt_instances(cloud, Task::P2B)) pred.instances.push_back({g.cls, 1.0, std::move(g.indices)});
  for (auto& g : gt_instances(cloud, Task::P2T)) pred.instances.push_back({g.cls, 1.0, std::move(g.indices)});
  return pred;
}

// ---------------------------------------------------------------------------

MiouResult miou(std::span<const std::uint8_t> gt, std::span<const std::uint8_t> pred, int n_classes) {
  if (gt.size() != pred.size()) {
    throw EvalMismatchError("miou: " + std::to_string(gt.size()) + " gt labels vs " + std::to_string(pred.size()) +
                            " predicted labels");
  }
  if (n_classes <= 0) throw InvalidArgument("miou: n_classes must be positive");
  const auto nc = static_cast<std::size_t>(n_classes);
  std::vector<std::size_t> inter(nc, 0), gt_count(nc, 0), pred_count(nc, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] >= nc || pred[i] >= nc) throw InvalidArgument("miou: class id out of range at point " + std::to_string(i));
    ++gt_count[gt[i]];
    ++pred_count[pred[i]];
    if (gt[i] == pred[i]) ++inter[gt[i]];
  }
  MiouResult r;
  r.class_iou.assign(nc, kNaN);
  r.class_present.assign(nc, false);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    const std::size_t uni = gt_count[c] + pred_count[c] - inter[c];
    if (uni == 0) continue;
    r.class_present[c] = true;
    const double iou = static_cast<double>(inter[c]) / static_cast<double>(uni);
    r.class_iou[c] = 100.0 * iou;
    sum += iou;
    ++present;
  }
  r.miou = present == 0 ? 100.0 : 100.0 * (sum / static_cast<double>(present));
  return r;
}

// ---------------------------------------------------------------------------

ApResult instance_ap(const std::vector<GtInstance>& gt, const std::vector<InstanceMask>& pred,
                     std::span<const int> thresholds_pct) {
  ApResult result;
  if (thresholds_pct.empty()) throw InvalidArgument("instance_ap: no thresholds");
  if (gt.empty()) {
    const double v = pred.empty() ? 100.0 : 0.0;
    result.per_threshold.assign(thresholds_pct.size(), v);
    result.ap = v;
    result.ap50 = v;
    return result;
  }

  std::vector<std::vector<std::uint32_t>> masks;
  masks.reserve(pred.size());
  for (const auto& p : pred) masks.push_back(p.indices);
  const auto inter = intersections(gt, masks);

  std::vector<std::uint8_t> classes;
  for (const auto& g : gt) classes.push_back(g.cls);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  std::vector<std::size_t> order(pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred[a].score > pred[b].score; });

  double sum_over_thresholds = 0.0;
  for (const int t : thresholds_pct) {
    double class_sum = 0.0;
    for (const std::uint8_t c : classes) {
      std::vector<std::size_t> gts;
      for (std::size_t g = 0; g < gt.size(); ++g) {
        if (gt[g].cls == c) gts.push_back(g);
      }
      std::vector<bool> matched(gt.size(), false);
      std::vector<bool> tp_flags;
      for (const std::size_t p : order) {
        if (pred[p].cls != c) continue;
        std::size_t best = gt.size();
        Frac best_iou{0, 1};
        for (const std::size_t g : gts) {
          if (matched[g]) continue;
          const std::uint64_t in = inter[p][g];
          const Frac iou{in, pred[p].indices.size() + gt[g].indices.size() - in};
          if (best == gt.size() || frac_greater(iou, best_iou)) {
            best = g;
            best_iou = iou;
          }
        }
        const bool tp = best != gt.size() && best_iou.den > 0 &&
                        static_cast<unsigned __int128>(best_iou.num) * 100 >=
                            static_cast<unsigned __int128>(t) * best_iou.den;
        if (tp) matched[best] = true;
        tp_flags.push_back(tp);
      }
      // Precision envelope from the right, summed at every recall step.
      std::vector<double> precision(tp_flags.size());
      std::size_t tp_cum = 0;
      for (std::size_t k = 0; k < tp_flags.size(); ++k) {
        tp_cum += tp_flags[k] ? 1 : 0;
        precision[k] = static_cast<double>(tp_cum) / static_cast<double>(k + 1);
      }
      double env = 0.0;
      double area = 0.0;
      for (std::size_t k = tp_flags.size(); k-- > 0;) {
        env = std::max(env, precision[k]);
        if (tp_flags[k]) area += env;
      }
      class_sum += area / static_cast<double>(gts.size());
    }
    const double v = 100.0 * (class_sum / static_cast<double>(classes.size()));
    result.per_threshold.push_back(v);
    sum_over_thresholds += v;
  }
  result.ap = sum_over_thresholds / static_cast<double>(thresholds_pct.size());
  result.ap50 = kNaN;
  for (std::size_t i = 0; i < thresholds_pct.size(); ++i) {
    if (thresholds_pct[i] == 50) result.ap50 = result.per_threshold[i];
  }
  return result;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::uint32_t>> paint_disjoint(const std::vector<InstanceMask>& pred, std::size_t n_points) {
  std::vector<std::int64_t> owner(n_points, -1);
  for (std::size_t k = 0; k < pred.size(); ++k) {
    for (std::uint32_t i : pred[k].indices) {
      if (i >= n_points) throw InvalidArgument("paint_disjoint: point index out of range");
      const std::int64_t cur = owner[i];
      if (cur < 0 || pred[k].score > pred[static_cast<std::size_t>(cur)].score) owner[i] = static_cast<std::int64_t>(k);
    }
  }
  std::vector<std::vector<std::uint32_t>> out(pred.size());
  for (std::uint32_t i = 0; i < n_points; ++i) {
    if (owner[i] >= 0) out[static_cast<std::size_t>(owner[i])].push_back(i);
  }
  return out;
}

PqResult panoptic_quality(const std::vector<GtInstance>& gt, const std::vector<InstanceMask>& pred,
                          std::size_t n_points) {
  for (const auto& g : gt) {
    if (!g.indices.empty() && g.indices.back() >= n_points) {
      throw InvalidArgument("panoptic_quality: gt index out of range");
    }
  }
  const auto painted = paint_disjoint(pred, n_points);
  std::vector<std::int32_t> owner;
  if (!disjoint(gt, n_points, owner)) throw InvalidArgument("panoptic_quality: gt segments overlap");
  const auto inter = intersections(gt, painted);

  PqResult r;
  std::vector<int> gt_matches(gt.size(), 0);
  std::vector<int> pred_matches(pred.size(), 0);
  double iou_sum = 0.0;
  std::size_t n_pred_segments = 0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (painted[p].empty()) continue;
    ++n_pred_segments;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (gt[g].cls != pred[p].cls || gt[g].indices.empty()) continue;
      const std::size_t in = inter[p][g];
      const std::size_t uni = painted[p].size() + gt[g].indices.size() - in;
      if (2 * in <= uni) continue;
      ++gt_matches[g];
      ++pred_matches[p];
      r.matches.emplace_back(g, p);
      iou_sum += static_cast<double>(in) / static_cast<double>(uni);
    }
  }
  for (int m : gt_matches) {
    if (m > 1) throw std::logic_error("panoptic_quality: gt segment matched twice");
  }
  for (int m : pred_matches) {
    if (m > 1) throw std::logic_error("panoptic_quality: predicted segment matched twice");
  }
  std::sort(r.matches.begin(), r.matches.end());
  std::size_t n_gt_segments = 0;
  for (const auto& g : gt) n_gt_segments += g.indices.empty() ? 0 : 1;
  r.tp = r.matches.size();
  r.fp = n_pred_segments - r.tp;
  r.fn = n_gt_segments - r.tp;
  const double denom = static_cast<double>(r.tp) + 0.5 * static_cast<double>(r.fp) + 0.5 * static_cast<double>(r.fn);
  if (denom == 0.0) {
    r.pq = r.sq = r.rq = 100.0;
    return r;
  }
  const double sq = r.tp == 0 ? 0.0 : iou_sum / static_cast<double>(r.tp);
  const double rq = static_cast<double>(r.tp) / denom;
  r.sq = 100.0 * sq;
  r.rq = 100.0 * rq;
  r.pq = 100.0 * (sq * rq);
  return r;
}

// ---------------------------------------------------------------------------

Assignment hungarian_assign(const std::vector<std::vector<double>>& cost) {
  Assignment out;
  const std::size_t rows = cost.size();
  if (rows == 0) return out;
  const std::size_t cols = cost[0].size();
  for (const auto& row : cost) {
    if (row.size() != cols) throw InvalidArgument("hungarian_assign: ragged cost matrix");
    for (double c : row) {
      if (!std::isfinite(c)) throw InvalidArgument("hungarian_assign: non-finite cost");
    }
  }
  if (cols == 0) return out;

  // Potentials formulation with n <= m; wider-than-tall is solved transposed.
  const bool transposed = rows > cols;
  const std::size_t n = transposed ? cols : rows;
  const std::size_t m = transposed ? rows : cols;
  auto a = [&](std::size_t i, std::size_t j) { return transposed ? cost[j - 1][i - 1] : cost[i - 1][j - 1]; };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const std::size_t i = p[j];
    out.pairs.emplace_back(transposed ? j - 1 : i - 1, transposed ? i - 1 : j - 1);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (const auto& [r, c] : out.pairs) out.cost += cost[r][c];
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<InstanceMask> select(const PredictionSet& pred, InstanceClass cls, std::size_t min_points) {
  std::vector<InstanceMask> out;
  for (const auto& m : pred.instances) {
    if (m.cls == static_cast<std::uint8_t>(cls) && m.indices.size() >= min_points) out.push_back(m);
  }
  return out;
}

std::vector<GtInstance> drop_small(std::vector<GtInstance> gt, std::size_t min_points) {
  std::erase_if(gt, [&](const GtInstance& g) { return g.indices.size() < min_points; });
  return gt;
}

}  // namespace

MetricsReport evaluate(const LabeledPointCloud& gt, const PredictionSet& pred, Task task, const EvalOptions& options) {
  const std::size_t n = gt.size();
  if (pred.semantic.size() != n) {
    throw EvalMismatchError("ground truth has " + std::to_string(n) + " points, prediction has " +
                            std::to_string(pred.semantic.size()));
  }
  for (std::size_t k = 0; k < pred.instances.size(); ++k) {
    for (std::uint32_t i : pred.instances[k].indices) {
      if (i >= n) {
        throw EvalMismatchError("prediction instance " + std::to_string(k) + " references point " +
                                std::to_string(i) + " of a " + std::to_string(n) + "-point cloud");
      }
    }
  }
  validate(pred, n);

  MetricsReport r;
  r.task = task;
  const InstanceClass cls = task == Task::P2T ? InstanceClass::Tree : InstanceClass::Branch;
  const auto gts = drop_small(gt_instances(gt, task), options.min_instance_points);
  const auto preds = select(pred, cls, options.min_instance_points);
  r.n_gt_instances = gts.size();
  r.n_pred_instances = preds.size();
  r.ap = instance_ap(gts, preds);
  r.pq = panoptic_quality(gts, preds, n);

  if (task == Task::P2B) {
    std::vector<std::uint8_t> gt_sem(n);
    for (std::size_t i = 0; i < n; ++i) gt_sem[i] = static_cast<std::uint8_t>(gt.points[i].semantic);
    const MiouResult m = miou(gt_sem, pred.semantic, kNumSemanticClasses);
    r.class_iou = m.class_iou;
    r.miou = m.miou;
    const PqResult trunk = panoptic_quality(drop_small(gt_trunk_segments(gt), options.min_instance_points),
                                            select(pred, InstanceClass::Trunk, options.min_instance_points), n);
    r.pq_trunk = trunk.pq;
    r.pq_class_mean = 0.5 * (r.pq.pq + trunk.pq);
  } else {
    r.miou = kNaN;
    r.pq_trunk = kNaN;
    r.pq_class_mean = kNaN;
  }
  return r;
}

EvalSummary evaluate_panel(const LabeledPointCloud& gt, const PredictionSet& pred, const EvalOptions& options) {
  return {evaluate(gt, pred, Task::P2B, options), evaluate(gt, pred, Task::P2T, options)};
}

std::vector<std::pair<std::string, double>> report_fields(const EvalSummary& s) {
  const MetricsReport& b = s.p2b;
  const MetricsReport& t = s.p2t;
  auto iou = [&](std::size_t c) { return c < b.class_iou.size() ? b.class_iou[c] : kNaN; };
  return {
      {"mIoU", b.miou},
      {"P2B_AP50", b.ap.ap50},
      {"P2B_AP", b.ap.ap},
      {"P2B_PQ", b.pq.pq},
      {"P2T_AP", t.ap.ap},
      {"IoU_trunk", iou(0)},
      {"IoU_branch", iou(1)},
      {"P2B_SQ", b.pq.sq},
      {"P2B_RQ", b.pq.rq},
      {"P2B_PQ_trunk", b.pq_trunk},
      {"P2B_PQ_class_mean", b.pq_class_mean},
      {"P2T_AP50", t.ap.ap50},
      {"P2T_PQ", t.pq.pq},
      {"P2T_SQ", t.pq.sq},
      {"P2T_RQ", t.pq.rq},
      {"P2B_gt_instances", static_cast<double>(b.n_gt_instances)},
      {"P2B_pred_instances", static_cast<double>(b.n_pred_instances)},
      {"P2T_gt_instances", static_cast<double>(t.n_gt_instances)},
      {"P2T_pred_instances", static_cast<double>(t.n_pred_instances)},
  };
}

std::vector<std::pair<std::string, double>> aggregate_fields(const std::vector<EvalSummary>& panels) {
  if (panels.empty()) return {};
  std::vector<std::pair<std::string, double>> acc = report_fields(panels.front());
  std::vector<double> sum(acc.size(), 0.0);
  std::vector<std::size_t> count(acc.size(), 0);
  for (const auto& p : panels) {
    const auto f = report_fields(p);
    for (std::size_t k = 0; k < f.size(); ++k) {
      if (std::isnan(f[k].second)) continue;
      sum[k] += f[k].second;
      ++count[k];
    }
  }
  for (std::size_t k = 0; k < acc.size(); ++k) {
    acc[k].second = count[k] == 0 ? kNaN : sum[k] / static_cast<double>(count[k]);
  }
  return acc;
}

std::string format_report(const std::vector<std::pair<std::string, double>>& fields) {
  std::string out;
  char buf[64];
  for (const auto& [key, value] : fields) {
    if (std::isnan(value)) {
      out += key + "=nan\n";
    } else {
      std::snprintf(buf, sizeof(buf), "%.6f", value);
      out += key + "=" + buf + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void pred_fail(std::size_t offset, const std::string& what) {
  throw ParseError("prediction file (byte offset " + std::to_string(offset) + "): " + what);
}

template <typename T>
void put_le(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

template <typename T>
T get_le(std::string_view data, std::size_t& pos) {
  if (data.size() - pos < sizeof(T)) pred_fail(pos, "truncated instance record");
  T v;
  std::memcpy(&v, data.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string encode_prediction(const PredictionSet& pred, PredEncoding enc) {
  validate(pred, pred.semantic.size());
  std::string out = "pred v1 " + std::to_string(pred.semantic.size()) + " " + std::to_string(pred.instances.size()) + "\n";
  if (enc == PredEncoding::Text) {
    for (std::uint8_t c : pred.semantic) out += static_cast<char>('0' + c);
    out += '\n';
    for (const auto& m : pred.instances) {
      out += std::to_string(m.cls) + " " + shortest(m.score) + " " + std::to_string(m.indices.size());
      for (std::uint32_t i : m.indices) out += " " + std::to_string(i);
      out += '\n';
    }
  } else {
    out.append(reinterpret_cast<const char*>(pred.semantic.data()), pred.semantic.size());
    for (const auto& m : pred.instances) {
      put_le<std::uint8_t>(out, m.cls);
      put_le<double>(out, m.score);
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.indices.size()));
      for (std::uint32_t i : m.indices) put_le<std::uint32_t>(out, i);
    }
  }
  return out;
}

PredictionSet decode_prediction(const std::string& bytes) {
  const std::string_view data(bytes);
  const std::size_t nl = data.find('\n');
  if (nl == std::string_view::npos) pred_fail(0, "missing header line");
  const std::string_view header = data.substr(0, nl);
  unsigned long long n_points = 0, n_inst = 0;
  {
    constexpr std::string_view prefix = "pred v1 ";
    if (header.substr(0, prefix.size()) != prefix) pred_fail(0, "header must start with 'pred v1'");
    const char* p = header.data() + prefix.size();
    const char* end = header.data() + header.size();
    auto r1 = std::from_chars(p, end, n_points);
    if (r1.ec != std::errc() || r1.ptr == end || *r1.ptr != ' ') pred_fail(0, "bad point count in header");
    auto r2 = std::from_chars(r1.ptr + 1, end, n_inst);
    if (r2.ec != std::errc() || r2.ptr != end) pred_fail(0, "bad instance count in header");
  }
  if (n_points > std::numeric_limits<std::uint32_t>::max()) pred_fail(0, "point count too large");
  std::size_t pos = nl + 1;
  PredictionSet pred;

  const bool text = data.size() > pos && ((data[pos] >= '0' && data[pos] <= '9') || (n_points == 0 && data[pos] == '\n'));
  if (data.size() - pos < n_points) pred_fail(pos, "truncated semantic section");
  pred.semantic.resize(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const auto c = static_cast<unsigned char>(data[pos + i]);
    if (text) {
      if (c < '0' || c > '9') pred_fail(pos + i, "point " + std::to_string(i) + ": semantic label is not a digit");
      pred.semantic[i] = static_cast<std::uint8_t>(c - '0');
    } else {
      pred.semantic[i] = c;
    }
  }
  pos += n_points;

  if (text) {
    if (pos >= data.size() || data[pos] != '\n') pred_fail(pos, "semantic section must end with a newline");
    ++pos;
    for (std::size_t k = 0; k < n_inst; ++k) {
      const std::size_t line_start = pos;
      const std::size_t eol = data.find('\n', pos);
      if (eol == std::string_view::npos) pred_fail(pos, "instance " + std::to_string(k) + ": missing line");
      const char* p = data.data() + pos;
      const char* end = data.data() + eol;
      auto fail_here = [&](const std::string& what) { pred_fail(line_start, "instance " + std::to_string(k) + ": " + what); };
      auto skip_space = [&] {
        if (p == end || *p != ' ') fail_here("expected a space");
        ++p;
      };
      unsigned cls = 0;
      auto r = std::from_chars(p, end, cls);
      if (r.ec != std::errc() || cls > 255) fail_here("bad class");
      p = r.ptr;
      skip_space();
      double score = 0.0;
      auto rs = std::from_chars(p, end, score);
      if (rs.ec != std::errc()) fail_here("bad score");
      p = rs.ptr;
      skip_space();
      unsigned long long count = 0;
      auto rc = std::from_chars(p, end, count);
      if (rc.ec != std::errc() || count > n_points) fail_here("bad point count");
      p = rc.ptr;
      InstanceMask m;
      m.cls = static_cast<std::uint8_t>(cls);
      m.score = score;
      m.indices.reserve(count);
      for (std::size_t j = 0; j < count; ++j) {
        skip_space();
        std::uint32_t idx = 0;
        auto ri = std::from_chars(p, end, idx);
        if (ri.ec != std::errc()) fail_here("bad point index " + std::to_string(j));
        p = ri.ptr;
        m.indices.push_back(idx);
      }
      if (p != end) fail_here("unexpected trailing fields");
      pred.instances.push_back(std::move(m));
      pos = eol + 1;
    }
    while (pos < data.size() && (data[pos] == '\n' || data[pos] == '\r' || data[pos] == ' ')) ++pos;
  } else {
    for (std::size_t k = 0; k < n_inst; ++k) {
      InstanceMask m;
      m.cls = get_le<std::uint8_t>(data, pos);
      m.score = get_le<double>(data, pos);
      const auto count = get_le<std::uint32_t>(data, pos);
      if (count > n_points) pred_fail(pos - 4, "instance " + std::to_string(k) + ": point count exceeds cloud size");
      m.indices.reserve(count);
      for (std::uint32_t j = 0; j < count; ++j) m.indices.push_back(get_le<std::uint32_t>(data, pos));
      pred.instances.push_back(std::move(m));
    }
  }
  if (pos != data.size()) pred_fail(pos, "trailing data after last instance");
  try {
    validate(pred, pred.semantic.size());
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
  return pred;
}

void write_prediction(const std::filesystem::path& path, const PredictionSet& pred, PredEncoding enc) {
  write_file(path, encode_prediction(pred, enc));
}

PredictionSet read_prediction(const std::filesystem::path& path) {
  try {
    return decode_prediction(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace orchard
