#pragma once

// Instance matching and the evaluation metrics built on it: per-class
// panoptic quality (PQ = DQ * SQ), its class mean mPQ, and the coefficient
// of determination of per-patch nucleus counts.
//
// A ground-truth and a predicted instance of the same class match when
// their IoU exceeds 0.5. Such a match is necessarily unique, so no
// assignment step is needed. The test 2 |A n B| > |A u B| is evaluated in
// integers.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nucleiquant/dataset.hpp"

namespace nucleiquant {

// |a n b| / |a u b| for sorted, duplicate-free pixel index lists.
// Throws Error(kEmptyPair) when both are empty.
double iou(std::span<const std::size_t> a, std::span<const std::size_t> b);

struct MatchedPair {
  std::uint32_t gt_id = 0;
  std::uint32_t pred_id = 0;
  std::uint64_t intersection = 0;
  std::uint64_t union_size = 0;
  double iou = 0.0;

  friend bool operator==(const MatchedPair&, const MatchedPair&) = default;
};

// Lists are sorted by id (TP by gt id).
struct ClassMatch {
  std::vector<MatchedPair> tp;
  std::vector<std::uint32_t> fp;
  std::vector<std::uint32_t> fn;

  friend bool operator==(const ClassMatch&, const ClassMatch&) = default;
};

struct MatchResult {
  std::vector<ClassMatch> classes;  // entry t - 1 holds class t

  const ClassMatch& at(int cls) const { return classes.at(static_cast<std::size_t>(cls - 1)); }
  friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

// Throws Error(kShapeMismatch) for differing extents.
MatchResult match_instances(const LabelMap& gt, const LabelMap& pred,
                            int num_classes);
// Same matching with every foreground class merged into one.
ClassMatch match_class_agnostic(const LabelMap& gt, const LabelMap& pred);

// Pooled matching counts for one class.
struct PqStats {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double iou_sum = 0.0;

  void add(const ClassMatch& m);
};

struct PqValue {
  double pq = 0.0;
  double dq = 0.0;
  double sq = 0.0;
};

// SQ is 0 when there are no true positives. Throws Error(kUndefinedClass)
// when tp + fp + fn == 0.
PqValue pq_from_stats(const PqStats& stats);
PqValue pq_per_class(const MatchResult& m, int cls);

// Stats are pooled over all patches per class before PQ is formed; classes
// without a single instance on either side are left out of the mean.
// Throws Error(kNoInstancesAnywhere) if that leaves no class.
double mpq(std::span<const MatchResult> matches, int num_classes);

// 1 - RSS / TSS. Throws Error(kShapeMismatch) for unequal or < 2 lengths and
// Error(kDegenerateTss) when the ground truth is constant.
double r2_per_class(std::span<const double> gt, std::span<const double> pred);

// Mean over the classes that have a value. Throws Error(kAllDegenerate) if none.
double multi_r2(std::span<const std::optional<double>> per_class);

enum class Aggregation { kDataset, kPerImage };

std::string_view to_string(Aggregation aggregation);

struct EvaluateOptions {
  Aggregation aggregation = Aggregation::kDataset;
  std::size_t threads = 1;
};

struct ClassReport {
  int cls = 0;
  std::optional<double> pq, dq, sq;
  std::size_t tp = 0, fp = 0, fn = 0;
  double iou_sum = 0.0;
  std::optional<double> r2;  // empty when the class's GT counts are constant
  std::size_t gt_total = 0;
  std::size_t pred_total = 0;
};

struct MetricsReport {
  int num_classes = 0;
  std::size_t num_patches = 0;
  Aggregation aggregation = Aggregation::kDataset;
  std::vector<ClassReport> classes;
  std::optional<double> mpq;
  std::optional<double> binary_pq;
  std::optional<double> multi_r2;
  // [patch][class - 1]
  std::vector<std::vector<std::size_t>> gt_counts;
  std::vector<std::vector<std::size_t>> pred_counts;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// In per-image mode PQ/DQ/SQ of a class average over the patches where the
// class occurs on either side, and mPQ averages each patch's class mean over
// patches with at least one instance. Counts and R2 do not depend on the mode.
MetricsReport evaluate(std::span<const LabelMap> gt, std::span<const LabelMap> pred,
                       int num_classes, const EvaluateOptions& options = {});

// CSV of per-patch counts: patch_index, class_1..class_C, then a TOTAL row.
std::string counts_csv(std::span<const std::vector<std::size_t>> counts,
                       int num_classes);

}  // namespace nucleiquant
