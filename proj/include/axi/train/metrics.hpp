#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace axi::train {

/// Positive means defect. A joint is flagged when score >= threshold.
struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t positives() const { return tp + fn; }
  std::size_t negatives() const { return fp + tn; }
  /// NaN when there are no positives (resp. negatives).
  double recall() const;
  double fpr() const;
};

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold);

struct RocPoint {
  double threshold;  // +infinity for the (0, 0) anchor
  double fpr;
  double tpr;
};

/// Operating points over every unique score plus 0 and 1, with the (0, 0)
/// anchor, sorted by (fpr, tpr).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Trapezoid area under FPR-sorted points.
double auroc(std::span<const RocPoint> roc);

struct ThresholdRow {
  double threshold, recall, fpr;
};

struct OperatingPoint {
  double target_recall;
  double threshold;
  double recall;
  double fpr;
};

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EvalReport {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double auroc = 0.0;
  std::vector<ThresholdRow> table;  // fixed grid view
  std::vector<RocPoint> roc;
  std::vector<OperatingPoint> operating_points;
  std::vector<std::string> joint_ids;
  std::vector<double> scores;
  std::vector<int> labels;
};

/// Grid 0.1, 0.2, ..., 0.9 used for the threshold table.
std::vector<double> default_grid();

/// Builds the report from per-joint scores. Throws MetricError unless both
/// classes are present.
EvalReport make_report(std::vector<std::string> joint_ids, std::vector<double> scores, std::vector<int> labels,
                       const std::vector<double>& grid = default_grid(),
                       const std::vector<double>& targets = {0.90, 0.95});

/// Largest candidate threshold (unique scores, 0, 1 and the table grid)
/// whose recall on the report's scores is at least `target`.
double select_threshold(const EvalReport& report, double target);

struct WorkloadRow {
  std::string model;
  double auroc;
  std::vector<double> targets;
  std::vector<double> fpr;       // FPR at each target
  std::vector<double> filtered;  // 1 - FPR: normal joints kept from specialists
};

/// FPR at each recall target, using the report's own operating thresholds.
WorkloadRow workload_row(const std::string& model, const EvalReport& report, const std::vector<double>& targets);

/// FPR measured on `report` at thresholds chosen elsewhere (e.g. on val).
WorkloadRow workload_row_at(const std::string& model, const EvalReport& report, const std::vector<double>& targets,
                            const std::vector<double>& thresholds);

/// Fraction of normal joints filtered out of manual review.
inline double filtered_fraction(double fpr) { return 1.0 - fpr; }

}  // namespace axi::train
