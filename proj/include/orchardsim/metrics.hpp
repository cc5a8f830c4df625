#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "orchardsim/cloud.hpp"

namespace orchard {

/// Instance class ids used by prediction files and ground-truth extraction.
enum class InstanceClass : std::uint8_t { Trunk = 0, Branch = 1, Tree = 2 };
inline constexpr int kNumInstanceClasses = 3;

struct InstanceMask {
  std::uint8_t cls = 1;
  double score = 1.0;
  std::vector<std::uint32_t> indices;  // strictly ascending point indices
  bool operator==(const InstanceMask&) const = default;
};

struct PredictionSet {
  std::vector<std::uint8_t> semantic;  // one class id per point
  std::vector<InstanceMask> instances;
  bool operator==(const PredictionSet&) const = default;
};

/// Throws InvalidArgument on out-of-range indices, unsorted or duplicated
/// indices, non-finite or out-of-[0,1] scores, or unknown class ids.
void validate(const PredictionSet& pred, std::size_t n_points);

struct GtInstance {
  std::uint8_t cls = 1;
  std::vector<std::uint32_t> indices;  // ascending
};

enum class Task { P2T, P2B };

std::string to_string(Task task);

/// Ground-truth instances of a labeled cloud. P2T: one class-2 instance per
/// tree_id. P2B: one class-1 instance per (tree_id, branch_id) branch.
std::vector<GtInstance> gt_instances(const LabeledPointCloud& cloud, Task task);

/// One class-0 segment per tree holding that tree's trunk points.
std::vector<GtInstance> gt_trunk_segments(const LabeledPointCloud& cloud);

/// Perfect prediction: semantic labels copied, one instance per trunk, branch
/// and tree with score 1.
PredictionSet prediction_from_ground_truth(const LabeledPointCloud& cloud);

// --- mIoU -------------------------------------------------------------------

struct MiouResult {
  std::vector<double> class_iou;     // x100; NaN when absent from gt and pred
  std::vector<bool> class_present;
  double miou = 0.0;                 // x100; 100 if no class is present at all
};

MiouResult miou(std::span<const std::uint8_t> gt, std::span<const std::uint8_t> pred, int n_classes);

// --- AP ---------------------------------------------------------------------

/// IoU thresholds 0.50, 0.55, ..., 0.95 expressed in hundredths, so that
/// threshold tests run in exact integer arithmetic.
inline constexpr std::array<int, 10> kApThresholdsPct = {50, 55, 60, 65, 70, 75, 80, 85, 90, 95};

struct ApResult {
  double ap = 0.0;    // x100, mean over thresholds
  double ap50 = 0.0;  // x100
  std::vector<double> per_threshold;  // x100
};

/// Average precision of `pred` against `gt` (both restricted to the classes
/// present in `gt`). Per class and threshold: predictions in descending score
/// order (stable) are greedily matched to the unmatched gt instance of the
/// same class with the highest IoU, a TP iff IoU >= threshold; the precision
/// envelope is integrated over all recall steps. Per-threshold values are
/// averaged over the classes that have gt instances.
/// No gt at all: 100 when there are no predictions either, else 0.
ApResult instance_ap(const std::vector<GtInstance>& gt, const std::vector<InstanceMask>& pred,
                     std::span<const int> thresholds_pct = kApThresholdsPct);

// --- PQ ---------------------------------------------------------------------

struct PqResult {
  double pq = 0.0;  // x100
  double sq = 0.0;  // x100
  double rq = 0.0;  // x100
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (gt index, pred index)
};

/// Paints overlapping predictions into disjoint segments: each point goes to
/// the covering instance with the highest score, ties to the lower index.
/// Returns per-instance point lists (possibly empty).
std::vector<std::vector<std::uint32_t>> paint_disjoint(const std::vector<InstanceMask>& pred, std::size_t n_points);

/// Panoptic quality; gt segments must be disjoint. Predictions are painted
/// first, then matched to gt of the same class at IoU > 0.5.
/// Empty gt and no predicted segments gives 100.
PqResult panoptic_quality(const std::vector<GtInstance>& gt, const std::vector<InstanceMask>& pred,
                          std::size_t n_points);

// --- assignment ---------------------------------------------------------------

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), ascending rows
  double cost = 0.0;
};

/// Minimum-cost assignment of min(n, m) pairs on an n x m cost matrix.
Assignment hungarian_assign(const std::vector<std::vector<double>>& cost);

// --- evaluation -------------------------------------------------------------

struct EvalOptions {
  std::size_t min_instance_points = 0;  // smaller gt and predicted instances are dropped
};

struct MetricsReport {
  Task task = Task::P2B;
  std::vector<double> class_iou;  // P2B only: trunk, branch
  double miou = 0.0;              // P2B only
  ApResult ap;
  PqResult pq;
  double pq_trunk = 0.0;       // P2B: trunk scored as one segment per tree
  double pq_class_mean = 0.0;  // P2B: mean of branch PQ and trunk PQ
  std::size_t n_gt_instances = 0;
  std::size_t n_pred_instances = 0;
};

/// Throws EvalMismatchError if point counts differ.
MetricsReport evaluate(const LabeledPointCloud& gt, const PredictionSet& pred, Task task,
                       const EvalOptions& options = {});

/// Both tasks for one panel.
struct EvalSummary {
  MetricsReport p2b;
  MetricsReport p2t;
};

EvalSummary evaluate_panel(const LabeledPointCloud& gt, const PredictionSet& pred, const EvalOptions& options = {});

/// Key/value pairs in a fixed order; the first five keys are
/// mIoU, P2B_AP50, P2B_AP, P2B_PQ, P2T_AP.
std::vector<std::pair<std::string, double>> report_fields(const EvalSummary& s);

/// Field-wise mean over panels (NaN entries skipped).
std::vector<std::pair<std::string, double>> aggregate_fields(const std::vector<EvalSummary>& panels);

/// `key=value` lines.
std::string format_report(const std::vector<std::pair<std::string, double>>& fields);

// --- prediction files -----------------------------------------------------------

enum class PredEncoding { Text, Binary };

std::string encode_prediction(const PredictionSet& pred, PredEncoding enc);
PredictionSet decode_prediction(const std::string& bytes);
void write_prediction(const std::filesystem::path& path, const PredictionSet& pred, PredEncoding enc);
PredictionSet read_prediction(const std::filesystem::path& path);

}  // namespace orchard
