#include "axi/train/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace axi::train {

using nlohmann::json;

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double from_json_number(const json& j, double if_null) { return j.is_null() ? if_null : j.get<double>(); }

std::string fmt(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  json j;
  j["positives"] = r.positives;
  j["negatives"] = r.negatives;
  j["auroc"] = r.auroc;
  j["thresholds"] = json::array();
  for (const auto& row : r.table) {
    j["thresholds"].push_back({{"threshold", row.threshold}, {"recall", number_or_null(row.recall)},
                               {"fpr", number_or_null(row.fpr)}});
  }
  j["roc"] = json::array();
  for (const auto& p : r.roc) {
    j["roc"].push_back({{"threshold", number_or_null(p.threshold)}, {"fpr", p.fpr}, {"tpr", p.tpr}});
  }
  j["operating_points"] = json::array();
  for (const auto& op : r.operating_points) {
    j["operating_points"].push_back(
        {{"target_recall", op.target_recall}, {"threshold", op.threshold}, {"recall", op.recall}, {"fpr", op.fpr}});
  }
  j["scores"] = json::array();
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    j["scores"].push_back({{"joint_id", r.joint_ids[i]}, {"score", r.scores[i]}, {"label", r.labels[i]}});
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    EvalReport r;
    r.positives = j.at("positives").get<std::size_t>();
    r.negatives = j.at("negatives").get<std::size_t>();
    r.auroc = j.at("auroc").get<double>();
    const double nan = std::nan("");
    for (const auto& row : j.at("thresholds")) {
      r.table.push_back({row.at("threshold").get<double>(), from_json_number(row.at("recall"), nan),
                         from_json_number(row.at("fpr"), nan)});
    }
    for (const auto& p : j.at("roc")) {
      r.roc.push_back({from_json_number(p.at("threshold"), INFINITY), p.at("fpr").get<double>(),
                       p.at("tpr").get<double>()});
    }
    for (const auto& op : j.at("operating_points")) {
      r.operating_points.push_back({op.at("target_recall").get<double>(), op.at("threshold").get<double>(),
                                    op.at("recall").get<double>(), op.at("fpr").get<double>()});
    }
    for (const auto& s : j.at("scores")) {
      r.joint_ids.push_back(s.at("joint_id").get<std::string>());
      r.scores.push_back(s.at("score").get<double>());
      r.labels.push_back(s.at("label").get<int>());
    }
    return r;
  } catch (const json::exception& e) {
    throw MetricError(std::string("malformed report: ") + e.what());
  }
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << report_to_json(report);
  if (!out) throw std::runtime_error("short write to " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

void write_roc_tsv(std::ostream& out, const EvalReport& report) {
  out << "#fpr\ttpr\n";
  for (const auto& p : report.roc) out << fmt(p.fpr, 6) << '\t' << fmt(p.tpr, 6) << '\n';
}

std::string format_threshold_table(const EvalReport& val, const EvalReport* test) {
  std::ostringstream os;
  os << "threshold\tval_recall\tval_fpr";
  if (test) os << "\ttest_recall\ttest_fpr";
  os << '\n';
  for (std::size_t i = 0; i < val.table.size(); ++i) {
    const auto& v = val.table[i];
    os << fmt(v.threshold, 2) << '\t' << fmt(v.recall) << '\t' << fmt(v.fpr);
    if (test) {
      const Confusion c = confusion_at(test->scores, test->labels, v.threshold);
      os << '\t' << fmt(c.recall()) << '\t' << fmt(c.fpr());
    }
    os << '\n';
  }
  return os.str();
}

std::string format_workload(const std::vector<WorkloadRow>& rows) {
  std::ostringstream os;
  if (rows.empty()) return "";
  os << "model\tauroc";
  for (double t : rows.front().targets) os << "\tfpr@" << fmt(100 * t, 0) << "%recall";
  for (double t : rows.front().targets) os << "\tfiltered@" << fmt(100 * t, 0) << "%recall";
  os << '\n';
  for (const auto& r : rows) {
    os << r.model << '\t' << fmt(r.auroc);
    for (double f : r.fpr) os << '\t' << fmt(f);
    for (double f : r.filtered) os << '\t' << fmt(f);
    os << '\n';
  }
  return os.str();
}

}  // namespace axi::train
