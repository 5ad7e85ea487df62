#include "axi/train/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace axi::train {

double Confusion::recall() const {
  return positives() ? static_cast<double>(tp) / static_cast<double>(positives())
                     : std::numeric_limits<double>::quiet_NaN();
}

double Confusion::fpr() const {
  return negatives() ? static_cast<double>(fp) / static_cast<double>(negatives())
                     : std::numeric_limits<double>::quiet_NaN();
}

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("scores and labels differ in length");
  for (int l : labels) {
    if (l != 0 && l != 1) throw MetricError("labels must be 0 or 1");
  }
}

}  // namespace

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flagged = scores[i] >= threshold;
    if (labels[i]) {
      flagged ? ++c.tp : ++c.fn;
    } else {
      flagged ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  std::vector<double> candidates(scores.begin(), scores.end());
  candidates.push_back(0.0);
  candidates.push_back(1.0);
  std::sort(candidates.begin(), candidates.end(), std::greater<>());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = labels.size() - pos;
  auto rate = [](std::size_t k, std::size_t n) { return n ? static_cast<double>(k) / static_cast<double>(n) : 0.0; };

  std::vector<RocPoint> roc;
  roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0, next = 0;
  for (double tau : candidates) {
    while (next < order.size() && scores[order[next]] >= tau) {
      labels[order[next]] ? ++tp : ++fp;
      ++next;
    }
    roc.push_back({tau, rate(fp, neg), rate(tp, pos)});
  }
  std::stable_sort(roc.begin(), roc.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.fpr != b.fpr ? a.fpr < b.fpr : a.tpr < b.tpr;
  });
  return roc;
}

double auroc(std::span<const RocPoint> roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * 0.5 * (roc[i].tpr + roc[i - 1].tpr);
  }
  return area;
}

std::vector<double> default_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 9; ++i) g.push_back(i / 10.0);
  return g;
}

namespace {

std::vector<double> candidate_thresholds(const EvalReport& report) {
  std::vector<double> c(report.scores.begin(), report.scores.end());
  c.push_back(0.0);
  c.push_back(1.0);
  for (const auto& row : report.table) c.push_back(row.threshold);
  std::sort(c.begin(), c.end(), std::greater<>());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

}  // namespace

double select_threshold(const EvalReport& report, double target) {
  if (!(target >= 0.0 && target <= 1.0)) throw MetricError("recall target must be in [0, 1]");
  // Recall only grows as the threshold falls, so the first hit from the top
  // is the largest feasible threshold.
  for (double tau : candidate_thresholds(report)) {
    if (confusion_at(report.scores, report.labels, tau).recall() >= target) return tau;
  }
  throw MetricError("recall " + std::to_string(target) + " is unattainable on these scores");
}

EvalReport make_report(std::vector<std::string> joint_ids, std::vector<double> scores, std::vector<int> labels,
                       const std::vector<double>& grid, const std::vector<double>& targets) {
  check_inputs(scores, labels);
  if (joint_ids.size() != scores.size()) throw MetricError("joint ids and scores differ in length");
  EvalReport r;
  r.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.negatives = labels.size() - r.positives;
  if (r.positives == 0 || r.negatives == 0) {
    throw MetricError("evaluation needs both classes: " + std::to_string(r.positives) + " defect, " +
                      std::to_string(r.negatives) + " normal");
  }
  r.joint_ids = std::move(joint_ids);
  r.scores = std::move(scores);
  r.labels = std::move(labels);
  r.roc = roc_curve(r.scores, r.labels);
  r.auroc = auroc(r.roc);
  for (double tau : grid) {
    const Confusion c = confusion_at(r.scores, r.labels, tau);
    r.table.push_back({tau, c.recall(), c.fpr()});
  }
  for (double target : targets) {
    const double tau = select_threshold(r, target);
    const Confusion c = confusion_at(r.scores, r.labels, tau);
    r.operating_points.push_back({target, tau, c.recall(), c.fpr()});
  }
  return r;
}

WorkloadRow workload_row_at(const std::string& model, const EvalReport& report, const std::vector<double>& targets,
                            const std::vector<double>& thresholds) {
  if (targets.size() != thresholds.size()) throw MetricError("one threshold per recall target");
  WorkloadRow row{model, report.auroc, targets, {}, {}};
  for (double tau : thresholds) {
    const double f = confusion_at(report.scores, report.labels, tau).fpr();
    row.fpr.push_back(f);
    row.filtered.push_back(filtered_fraction(f));
  }
  return row;
}

WorkloadRow workload_row(const std::string& model, const EvalReport& report, const std::vector<double>& targets) {
  std::vector<double> thresholds;
  for (double t : targets) thresholds.push_back(select_threshold(report, t));
  return workload_row_at(model, report, targets, thresholds);
}

}  // namespace axi::train
