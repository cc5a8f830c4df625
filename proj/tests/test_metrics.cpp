#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "orchardsim/error.hpp"
#include "orchardsim/io.hpp"
#include "orchardsim/metrics.hpp"
#include "support/oracles.hpp"

using namespace orchard;

namespace {

std::vector<std::uint32_t> range_idx(std::uint32_t lo, std::uint32_t hi) {
  std::vector<std::uint32_t> v(hi - lo);
  std::iota(v.begin(), v.end(), lo);
  return v;
}

InstanceMask mask(std::uint8_t cls, double score, std::vector<std::uint32_t> idx) {
  return {cls, score, std::move(idx)};
}

// One tree per entry of `branches_per_tree`; each trunk has 30 points and
// each branch 20, laid out tree by tree.
LabeledPointCloud toy_cloud(const std::vector<int>& branches_per_tree) {
  LabeledPointCloud c;
  int branch_id = 1;
  for (std::size_t t = 0; t < branches_per_tree.size(); ++t) {
    for (int k = 0; k < 30; ++k) {
      c.points.push_back({{static_cast<float>(t), 0.0f, 0.01f * k}, Semantic::Trunk, static_cast<int>(t) + 1, 0});
    }
    for (int b = 0; b < branches_per_tree[t]; ++b, ++branch_id) {
      for (int k = 0; k < 20; ++k) {
        c.points.push_back({{static_cast<float>(t) + 0.01f * k, 0.1f * b, 1.0f}, Semantic::Branch,
                            static_cast<int>(t) + 1, branch_id});
      }
    }
  }
  return c;
}

void expect_all_100(const EvalSummary& s) {
  EXPECT_DOUBLE_EQ(s.p2b.miou, 100.0);
  EXPECT_DOUBLE_EQ(s.p2b.ap.ap, 100.0);
  EXPECT_DOUBLE_EQ(s.p2b.ap.ap50, 100.0);
  EXPECT_DOUBLE_EQ(s.p2b.pq.pq, 100.0);
  EXPECT_DOUBLE_EQ(s.p2b.pq_trunk, 100.0);
  EXPECT_DOUBLE_EQ(s.p2t.ap.ap, 100.0);
  EXPECT_DOUBLE_EQ(s.p2t.pq.pq, 100.0);
}

}  // namespace

// --- mIoU -------------------------------------------------------------------

TEST(Miou, HandExample) {
  const std::vector<std::uint8_t> gt{0, 0, 1, 1}, pred{0, 1, 1, 1};
  const MiouResult r = miou(gt, pred, 2);
  EXPECT_DOUBLE_EQ(r.class_iou[0], 50.0);
  EXPECT_NEAR(r.class_iou[1], 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.miou, 58.33, 0.005);
  EXPECT_NEAR(r.miou, 100.0 * (0.5 + 2.0 / 3.0) / 2.0, 1e-12);
}

TEST(Miou, IdentityComplementAndAbsentClasses) {
  const std::vector<std::uint8_t> gt{0, 1, 1, 0, 1};
  EXPECT_DOUBLE_EQ(miou(gt, gt, 2).miou, 100.0);
  std::vector<std::uint8_t> comp(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) comp[i] = static_cast<std::uint8_t>(1 - gt[i]);
  EXPECT_DOUBLE_EQ(miou(gt, comp, 2).miou, 0.0);
  // Class 2 absent from both sides does not dilute the mean.
  const MiouResult r = miou(gt, gt, 3);
  EXPECT_DOUBLE_EQ(r.miou, 100.0);
  EXPECT_FALSE(r.class_present[2]);
  EXPECT_TRUE(std::isnan(r.class_iou[2]));
}

TEST(Miou, LengthMismatch) {
  const std::vector<std::uint8_t> a{0, 1}, b{0};
  EXPECT_THROW(miou(a, b, 2), EvalMismatchError);
}

TEST(Miou, MatchesOracle) {
  for (std::uint64_t s = 0; s < 300; ++s) {
    const auto pb = oracle::random_problem(s);
    EXPECT_NEAR(miou(pb.gt_semantic, pb.pred_semantic, 3).miou, oracle::miou(pb.gt_semantic, pb.pred_semantic, 3),
                1e-9)
        << s;
  }
}

// --- AP -----------------------------------------------------------------------

TEST(InstanceAp, PerfectPrediction) {
  const std::vector<GtInstance> gt{{1, range_idx(0, 10)}, {1, range_idx(10, 25)}, {0, range_idx(25, 30)}};
  std::vector<InstanceMask> pred;
  for (const auto& g : gt) pred.push_back(mask(g.cls, 1.0, g.indices));
  const ApResult r = instance_ap(gt, pred);
  EXPECT_DOUBLE_EQ(r.ap, 100.0);
  EXPECT_DOUBLE_EQ(r.ap50, 100.0);
}

TEST(InstanceAp, SingleMatchAtIou60) {
  const std::vector<GtInstance> gt{{1, range_idx(0, 10)}};
  const std::vector<InstanceMask> pred{mask(1, 0.9, range_idx(0, 6))};
  const ApResult r = instance_ap(gt, pred);
  EXPECT_DOUBLE_EQ(r.ap50, 100.0);
  EXPECT_DOUBLE_EQ(r.ap, 30.0);
  const double expect[] = {100, 100, 100, 0, 0, 0, 0, 0, 0, 0};
  for (int i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(r.per_threshold[static_cast<std::size_t>(i)], expect[i]);
}

TEST(InstanceAp, OneHitOneMiss) {
  const std::vector<GtInstance> gt{{1, range_idx(0, 10)}, {1, range_idx(10, 20)}};
  const std::vector<InstanceMask> pred{mask(1, 0.9, range_idx(0, 10)), mask(1, 0.8, range_idx(20, 30))};
  EXPECT_DOUBLE_EQ(instance_ap(gt, pred).ap50, 50.0);
}

TEST(InstanceAp, EmptyCases) {
  const std::vector<GtInstance> gt{{1, range_idx(0, 10)}};
  EXPECT_DOUBLE_EQ(instance_ap(gt, {}).ap, 0.0);
  EXPECT_DOUBLE_EQ(instance_ap(gt, {}).ap50, 0.0);
  EXPECT_DOUBLE_EQ(instance_ap({}, {}).ap, 100.0);
  EXPECT_DOUBLE_EQ(instance_ap({}, {mask(1, 0.5, {1})}).ap, 0.0);
}

TEST(InstanceAp, WrongClassIsNotAMatch) {
  const std::vector<GtInstance> gt{{1, range_idx(0, 10)}};
  EXPECT_DOUBLE_EQ(instance_ap(gt, {mask(0, 1.0, range_idx(0, 10))}).ap, 0.0);
}

TEST(InstanceAp, MatchesOracle) {
  for (std::uint64_t s = 0; s < 300; ++s) {
    const auto pb = oracle::random_problem(s);
    const ApResult r = instance_ap(pb.gt, pb.pred);
    const oracle::Ap o = oracle::instance_ap(pb.gt, pb.pred);
    ASSERT_NEAR(r.ap, o.ap, 1e-9) << s;
    ASSERT_NEAR(r.ap50, o.ap50, 1e-9) << s;
  }
}

TEST(InstanceAp, MonotoneInThreshold) {
  for (std::uint64_t s = 0; s < 500; ++s) {
    const auto pb = oracle::random_problem(1000 + s);
    const ApResult r = instance_ap(pb.gt, pb.pred);
    for (std::size_t i = 1; i < r.per_threshold.size(); ++i) {
      ASSERT_LE(r.per_threshold[i], r.per_threshold[i - 1] + 1e-12) << s;
    }
    ASSERT_LE(r.ap, r.ap50 + 1e-12);
    ASSERT_GE(r.ap, 0.0);
    ASSERT_LE(r.ap50, 100.0);
  }
}

// --- PQ -----------------------------------------------------------------------

TEST(PanopticQuality, Perfect) {
  const std::vector<GtInstance> gt{{1, range_idx(0, 10)}, {1, range_idx(10, 20)}};
  const PqResult r = panoptic_quality(gt, {mask(1, 1, range_idx(0, 10)), mask(1, 1, range_idx(10, 20))}, 20);
  EXPECT_DOUBLE_EQ(r.pq, 100.0);
  EXPECT_DOUBLE_EQ(r.sq, 100.0);
  EXPECT_DOUBLE_EQ(r.rq, 100.0);
}

TEST(PanopticQuality, OneMatchedOneMissed) {
  const std::vector<GtInstance> gt{{1, range_idx(0, 10)}, {1, range_idx(10, 20)}};
  const PqResult r = panoptic_quality(gt, {mask(1, 1, range_idx(0, 10))}, 20);
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_EQ(r.fp, 0u);
  EXPECT_NEAR(r.pq, 100.0 / 1.5, 1e-12);
  EXPECT_NEAR(r.pq, 66.67, 0.005);
}

TEST(PanopticQuality, IouExactlyHalfIsNotMatched) {
  const std::vector<GtInstance> gt{{1, range_idx(0, 4)}};
  const PqResult r = panoptic_quality(gt, {mask(1, 1, range_idx(0, 2))}, 4);
  EXPECT_EQ(r.tp, 0u);
  EXPECT_DOUBLE_EQ(r.pq, 0.0);
  // One more point tips it over.
  EXPECT_EQ(panoptic_quality(gt, {mask(1, 1, range_idx(0, 3))}, 4).tp, 1u);
}

TEST(PanopticQuality, OverlappingPredictionsArePainted) {
  const std::vector<InstanceMask> pred{mask(1, 0.5, range_idx(0, 10)), mask(1, 0.9, range_idx(5, 15)),
                                       mask(1, 0.9, range_idx(12, 20))};
  const auto painted = paint_disjoint(pred, 20);
  EXPECT_EQ(painted[0], range_idx(0, 5));
  EXPECT_EQ(painted[1], range_idx(5, 15));
  EXPECT_EQ(painted[2], range_idx(15, 20));
}

TEST(PanopticQuality, EmptyCases) {
  EXPECT_DOUBLE_EQ(panoptic_quality({}, {}, 10).pq, 100.0);
  const std::vector<GtInstance> gt{{1, range_idx(0, 4)}};
  EXPECT_DOUBLE_EQ(panoptic_quality(gt, {}, 4).pq, 0.0);
}

TEST(PanopticQuality, MatchesOracleAndFactorizes) {
  for (std::uint64_t s = 0; s < 300; ++s) {
    const auto pb = oracle::random_problem(s);
    const PqResult r = panoptic_quality(pb.gt, pb.pred, pb.n_points);
    const oracle::Pq o = oracle::panoptic_quality(pb.gt, pb.pred, pb.n_points);
    ASSERT_NEAR(r.pq, o.pq, 1e-9) << s;
    ASSERT_NEAR(r.sq, o.sq, 1e-9) << s;
    ASSERT_NEAR(r.rq, o.rq, 1e-9) << s;
    ASSERT_EQ(r.tp, o.tp);
    ASSERT_EQ(r.fp, o.fp);
    ASSERT_EQ(r.fn, o.fn);
    ASSERT_NEAR(r.pq, r.sq * r.rq / 100.0, 1e-9);
    // Matches are unique on both sides.
    std::set<std::size_t> gs, ps;
    for (const auto& [g, p] : r.matches) {
      ASSERT_TRUE(gs.insert(g).second);
      ASSERT_TRUE(ps.insert(p).second);
    }
  }
}

TEST(PanopticQuality, OverlappingGtRejected) {
  const std::vector<GtInstance> gt{{1, range_idx(0, 4)}, {1, range_idx(3, 6)}};
  EXPECT_THROW(panoptic_quality(gt, {}, 6), InvalidArgument);
}

// --- Hungarian ------------------------------------------------------------------

TEST(Hungarian, TwoByTwo) {
  const Assignment a = hungarian_assign({{1, 2}, {2, 1}});
  ASSERT_EQ(a.pairs.size(), 2u);
  EXPECT_EQ(a.pairs[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(a.pairs[1], (std::pair<std::size_t, std::size_t>{1, 1}));
  EXPECT_DOUBLE_EQ(a.cost, 2.0);
}

TEST(Hungarian, DiagonalCheapest) {
  std::vector<std::vector<double>> c(5, std::vector<double>(5, 10.0));
  for (std::size_t i = 0; i < 5; ++i) c[i][i] = 1.0;
  const Assignment a = hungarian_assign(c);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.pairs[i], (std::pair<std::size_t, std::size_t>{i, i}));
}

TEST(Hungarian, RandomSixBySixAgainstAllPermutations) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> c(6, std::vector<double>(6));
    for (auto& row : c) {
      for (auto& v : row) v = rng.uniform(-5.0, 20.0);
    }
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    do {
      double s = 0;
      for (std::size_t i = 0; i < 6; ++i) s += c[i][perm[i]];
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const Assignment a = hungarian_assign(c);
    ASSERT_NEAR(a.cost, best, 1e-9);
  }
}

TEST(Hungarian, RectangularUpToSevenAgainstOracle) {
  Rng rng(43);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.index(7), m = 1 + rng.index(7);
    std::vector<std::vector<double>> c(n, std::vector<double>(m));
    for (auto& row : c) {
      for (auto& v : row) v = rng.bernoulli(0.2) ? 3.0 : rng.uniform(0.0, 10.0);
    }
    const Assignment a = hungarian_assign(c);
    ASSERT_EQ(a.pairs.size(), std::min(n, m));
    std::set<std::size_t> rows, cols;
    double sum = 0;
    for (const auto& [r, k] : a.pairs) {
      ASSERT_TRUE(rows.insert(r).second);
      ASSERT_TRUE(cols.insert(k).second);
      sum += c[r][k];
    }
    ASSERT_NEAR(sum, a.cost, 1e-9);
    ASSERT_NEAR(a.cost, oracle::assignment_cost(c), 1e-9) << n << "x" << m;
  }
}

TEST(Hungarian, Errors) {
  EXPECT_TRUE(hungarian_assign({}).pairs.empty());
  EXPECT_THROW(hungarian_assign({{1, 2}, {3}}), InvalidArgument);
  EXPECT_THROW(hungarian_assign({{1, NAN}}), InvalidArgument);
}

// --- evaluation -------------------------------------------------------------------

TEST(Evaluate, GroundTruthScoresPerfect) {
  const LabeledPointCloud c = toy_cloud({3, 0, 5});
  expect_all_100(evaluate_panel(c, prediction_from_ground_truth(c)));
}

TEST(Evaluate, DroppedBranchOutOfTen) {
  const LabeledPointCloud c = toy_cloud({4, 6});
  PredictionSet pred = prediction_from_ground_truth(c);
  auto it = std::find_if(pred.instances.begin(), pred.instances.end(), [](const InstanceMask& m) { return m.cls == 1; });
  ASSERT_NE(it, pred.instances.end());
  pred.instances.erase(it);
  const MetricsReport r = evaluate(c, pred, Task::P2B);
  EXPECT_EQ(r.n_gt_instances, 10u);
  EXPECT_NEAR(r.pq.rq, 100.0 * 9.0 / 9.5, 1e-12);
  EXPECT_NEAR(r.pq.rq, 94.74, 0.005);
  EXPECT_NEAR(r.ap.ap50, 90.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.miou, 100.0);
}

TEST(Evaluate, InstanceOrderAndIdsDoNotMatter) {
  const LabeledPointCloud c = toy_cloud({2, 3, 4});
  PredictionSet pred = prediction_from_ground_truth(c);
  const auto base = report_fields(evaluate_panel(c, pred));
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    for (std::size_t i = pred.instances.size(); i > 1; --i) std::swap(pred.instances[i - 1], pred.instances[rng.index(i)]);
    const auto f = report_fields(evaluate_panel(c, pred));
    for (std::size_t k = 0; k < f.size(); ++k) EXPECT_EQ(f[k].second, base[k].second) << f[k].first;
  }
}

TEST(Evaluate, PointPermutationInvariance) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto pb = oracle::random_problem(s);
    Rng rng(s + 7);
    std::vector<std::uint32_t> perm(pb.n_points);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    auto remap = [&](std::vector<std::uint32_t> idx) {
      for (auto& v : idx) v = perm[v];
      std::sort(idx.begin(), idx.end());
      return idx;
    };
    auto gt2 = pb.gt;
    for (auto& g : gt2) g.indices = remap(g.indices);
    auto pred2 = pb.pred;
    for (auto& p : pred2) p.indices = remap(p.indices);
    const ApResult a = instance_ap(pb.gt, pb.pred), b = instance_ap(gt2, pred2);
    ASSERT_NEAR(a.ap, b.ap, 1e-9);
    ASSERT_NEAR(a.ap50, b.ap50, 1e-9);
    ASSERT_NEAR(panoptic_quality(pb.gt, pb.pred, pb.n_points).pq, panoptic_quality(gt2, pred2, pb.n_points).pq, 1e-9);
  }
}

TEST(Evaluate, EmptyPredictionScoresZero) {
  const LabeledPointCloud c = toy_cloud({3, 2});
  PredictionSet pred;
  pred.semantic.assign(c.size(), 0);
  const EvalSummary s = evaluate_panel(c, pred);
  EXPECT_DOUBLE_EQ(s.p2b.ap.ap, 0.0);
  EXPECT_DOUBLE_EQ(s.p2b.pq.pq, 0.0);
  EXPECT_DOUBLE_EQ(s.p2t.ap.ap, 0.0);
  EXPECT_DOUBLE_EQ(s.p2t.pq.pq, 0.0);
}

TEST(Evaluate, MismatchedCounts) {
  const LabeledPointCloud c = toy_cloud({1});
  PredictionSet pred = prediction_from_ground_truth(c);
  pred.semantic.pop_back();
  EXPECT_THROW(evaluate(c, pred, Task::P2B), EvalMismatchError);
  pred = prediction_from_ground_truth(c);
  pred.instances[0].indices.push_back(static_cast<std::uint32_t>(c.size()) + 5);
  EXPECT_THROW(evaluate(c, pred, Task::P2T), EvalMismatchError);
}

TEST(Evaluate, MinInstancePointsFilter) {
  LabeledPointCloud c = toy_cloud({3});
  // Shrink branch 3 to two points by relabeling the rest as branch 2.
  int seen = 0;
  for (auto& p : c.points) {
    if (p.branch_id == 3 && ++seen > 2) p.branch_id = 2;
  }
  const PredictionSet pred = prediction_from_ground_truth(c);
  EXPECT_EQ(evaluate(c, pred, Task::P2B).n_gt_instances, 3u);
  EvalOptions opts;
  opts.min_instance_points = 5;
  EXPECT_EQ(evaluate(c, pred, Task::P2B, opts).n_gt_instances, 2u);
}

TEST(Evaluate, ReportKeysAndFormat) {
  const LabeledPointCloud c = toy_cloud({2});
  const auto f = report_fields(evaluate_panel(c, prediction_from_ground_truth(c)));
  const char* head[] = {"mIoU", "P2B_AP50", "P2B_AP", "P2B_PQ", "P2T_AP"};
  for (int i = 0; i < 5; ++i) EXPECT_EQ(f[static_cast<std::size_t>(i)].first, head[i]);
  const std::string text = format_report(f);
  EXPECT_EQ(text.rfind("mIoU=100.000000\nP2B_AP50=100.000000\n", 0), 0u) << text;
  EXPECT_NE(format_report({{"x", NAN}}).find("x=nan"), std::string::npos);
}

TEST(Evaluate, AggregateSkipsNan) {
  EvalSummary a, b;
  a.p2b.miou = 80;
  b.p2b.miou = NAN;
  a.p2b.ap.ap = 10;
  b.p2b.ap.ap = 30;
  const auto f = aggregate_fields({a, b});
  EXPECT_DOUBLE_EQ(f[0].second, 80.0);
  EXPECT_DOUBLE_EQ(f[2].second, 20.0);
}

TEST(GroundTruth, InstancesFromLabels) {
  const LabeledPointCloud c = toy_cloud({2, 3});
  const auto trees = gt_instances(c, Task::P2T);
  ASSERT_EQ(trees.size(), 2u);
  EXPECT_EQ(trees[0].cls, 2);
  EXPECT_EQ(trees[0].indices.size(), 30u + 40u);
  const auto branches = gt_instances(c, Task::P2B);
  ASSERT_EQ(branches.size(), 5u);
  for (const auto& b : branches) EXPECT_EQ(b.indices.size(), 20u);
  const auto trunks = gt_trunk_segments(c);
  ASSERT_EQ(trunks.size(), 2u);
  EXPECT_EQ(trunks[1].indices.front(), 70u);
}

// --- prediction files ---------------------------------------------------------------

TEST(PredictionFile, RoundTripBothEncodings) {
  const LabeledPointCloud c = toy_cloud({2, 1});
  PredictionSet pred = prediction_from_ground_truth(c);
  pred.instances[1].score = 0.123456789012345678;
  for (PredEncoding enc : {PredEncoding::Text, PredEncoding::Binary}) {
    const std::string bytes = encode_prediction(pred, enc);
    EXPECT_EQ(bytes.rfind("pred v1 " + std::to_string(c.size()) + " " + std::to_string(pred.instances.size()) + "\n", 0),
              0u);
    EXPECT_EQ(decode_prediction(bytes), pred);
  }
  const auto path = std::filesystem::temp_directory_path() / "orchardsim_test_metrics" / "p.pred";
  write_prediction(path, pred, PredEncoding::Binary);
  EXPECT_EQ(read_prediction(path), pred);
}

TEST(PredictionFile, EmptyCloudRoundTrip) {
  PredictionSet pred;
  for (PredEncoding enc : {PredEncoding::Text, PredEncoding::Binary}) {
    EXPECT_EQ(decode_prediction(encode_prediction(pred, enc)), pred);
  }
}

TEST(PredictionFile, ParseErrors) {
  const LabeledPointCloud c = toy_cloud({1});
  const PredictionSet pred = prediction_from_ground_truth(c);
  const std::string good = encode_prediction(pred, PredEncoding::Text);
  EXPECT_THROW(decode_prediction(""), ParseError);
  EXPECT_THROW(decode_prediction("pred v2 1 0\n0\n"), ParseError);
  EXPECT_THROW(decode_prediction(good.substr(0, good.size() - 4)), ParseError);
  const std::string bin = encode_prediction(pred, PredEncoding::Binary);
  EXPECT_THROW(decode_prediction(bin.substr(0, bin.size() - 1)), ParseError);
  try {
    decode_prediction("pred v1 3 0\n01x\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_prediction("/nonexistent/orchardsim.pred"), IoError);
}

TEST(PredictionSet, Validation) {
  PredictionSet p;
  p.semantic = {0, 1, 1};
  p.instances = {mask(1, 0.5, {0, 2})};
  EXPECT_NO_THROW(validate(p, 3));
  p.instances[0].indices = {2, 0};
  EXPECT_THROW(validate(p, 3), InvalidArgument);
  p.instances[0].indices = {0, 3};
  EXPECT_THROW(validate(p, 3), InvalidArgument);
  p.instances[0] = mask(1, 1.5, {0});
  EXPECT_THROW(validate(p, 3), InvalidArgument);
  p.instances[0] = mask(5, 0.5, {0});
  EXPECT_THROW(validate(p, 3), InvalidArgument);
}
