#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "axi/train/metrics.hpp"

namespace axi::train {

/// JSON document: counts, auroc, threshold table, roc points (the anchor
/// threshold is null), operating points and per-joint scores.
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

void write_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report(const std::filesystem::path& path);

/// "fpr<TAB>tpr" rows for plotting.
void write_roc_tsv(std::ostream& out, const EvalReport& report);

/// Threshold | Recall | FPR table for one or two reports (val, test).
std::string format_threshold_table(const EvalReport& val, const EvalReport* test = nullptr);

/// One row per model: AUROC, FPR at each recall target, filtered fraction.
std::string format_workload(const std::vector<WorkloadRow>& rows);

}  // namespace axi::train
