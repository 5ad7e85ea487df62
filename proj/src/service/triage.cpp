#include "axi/service/triage.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

namespace axi::service {

using nlohmann::json;

std::string to_string(Status status) {
  switch (status) {
    case Status::kPending: return "pending";
    case Status::kConfirmedDefect: return "confirmed_defect";
    case Status::kOverriddenNormal: return "overridden_normal";
  }
  return "pending";
}

std::optional<Status> parse_status(const std::string& text) {
  if (text == "pending") return Status::kPending;
  if (text == "confirmed_defect") return Status::kConfirmedDefect;
  if (text == "overridden_normal") return Status::kOverriddenNormal;
  return std::nullopt;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

json item_to_json(const TriageItem& item, bool with_channels) {
  json j{{"seq", item.seq},
         {"joint_id", item.joint_id},
         {"board_type", item.board_type},
         {"score", item.score},
         {"threshold", item.threshold},
         {"status", to_string(item.status)},
         {"enqueued_at", item.enqueued_at},
         {"decided_by", item.decided_by.empty() ? json(nullptr) : json(item.decided_by)},
         {"decided_at", item.decided_at.empty() ? json(nullptr) : json(item.decided_at)}};
  if (with_channels) {
    j["roi"] = {{"xmin", item.roi.xmin}, {"xmax", item.roi.xmax}, {"ymin", item.roi.ymin}, {"ymax", item.roi.ymax}};
    j["window"] = {{"cxmin", item.window.cxmin},
                   {"cymin", item.window.cymin},
                   {"cxmax", item.window.cxmax},
                   {"cymax", item.window.cymax}};
    j["real_slices"] = item.real_slices;
    j["padded"] = item.padded;
    j["channels"] = item.channels;
  }
  return j;
}

TriageItem item_from_json(const json& j) {
  TriageItem item;
  item.seq = j.at("seq").get<std::uint64_t>();
  item.joint_id = j.at("joint_id").get<std::string>();
  item.board_type = j.at("board_type").get<std::string>();
  item.score = j.at("score").get<double>();
  item.threshold = j.at("threshold").get<double>();
  const auto status = parse_status(j.at("status").get<std::string>());
  if (!status) throw LogError("unknown status " + j.at("status").dump());
  item.status = *status;
  item.enqueued_at = j.at("enqueued_at").get<std::string>();
  if (!j.at("decided_by").is_null()) item.decided_by = j["decided_by"].get<std::string>();
  if (!j.at("decided_at").is_null()) item.decided_at = j["decided_at"].get<std::string>();
  const json& roi = j.at("roi");
  item.roi = {roi.at("xmin").get<std::int64_t>(), roi.at("xmax").get<std::int64_t>(),
              roi.at("ymin").get<std::int64_t>(), roi.at("ymax").get<std::int64_t>()};
  const json& w = j.at("window");
  item.window = {w.at("cxmin").get<std::int64_t>(), w.at("cymin").get<std::int64_t>(),
                 w.at("cxmax").get<std::int64_t>(), w.at("cymax").get<std::int64_t>()};
  item.real_slices = j.at("real_slices").get<std::size_t>();
  item.padded = j.at("padded").get<std::array<bool, preprocess::kChannels>>();
  item.channels = j.at("channels").get<std::vector<std::string>>();
  return item;
}

TriageQueue::TriageQueue(std::filesystem::path log_path, Clock clock)
    : log_path_(std::move(log_path)), clock_(std::move(clock)) {
  if (!log_path_.empty()) replay();
}

void TriageQueue::replay() {
  std::ifstream in(log_path_, std::ios::binary);
  if (!in) {
    if (std::filesystem::exists(log_path_)) throw LogError("cannot read decision log " + log_path_.string());
    return;  // first start
  }
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  std::size_t pos = 0, line_no = 0, good_end = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    ++line_no;
    if (nl == std::string::npos) break;  // torn final write, dropped below
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    good_end = pos;
    if (line.empty()) continue;
    const std::string where = log_path_.string() + " line " + std::to_string(line_no) + ": ";
    try {
      const json ev = json::parse(line);
      const std::string kind = ev.at("event").get<std::string>();
      if (kind == "enqueue") {
        TriageItem item = item_from_json(ev.at("item"));
        if (items_.contains(item.joint_id)) throw LogError("joint " + item.joint_id + " enqueued twice");
        order_.push_back(item.joint_id);
        items_.emplace(item.joint_id, std::move(item));
      } else if (kind == "decision") {
        const std::string id = ev.at("joint_id").get<std::string>();
        auto it = items_.find(id);
        if (it == items_.end()) throw LogError("decision for unknown joint " + id);
        if (it->second.status != Status::kPending) throw LogError("second decision for joint " + id);
        const auto verdict = parse_status(ev.at("verdict").get<std::string>());
        if (!verdict || *verdict == Status::kPending) throw LogError("bad verdict for joint " + id);
        it->second.status = *verdict;
        it->second.decided_by = ev.at("operator").get<std::string>();
        it->second.decided_at = ev.at("at").get<std::string>();
      } else {
        throw LogError("unknown event '" + kind + "'");
      }
    } catch (const LogError& e) {
      throw LogError(where + e.what());
    } catch (const json::exception& e) {
      throw LogError(where + e.what());
    }
  }
  if (good_end < text.size()) {
    // a crash mid-append leaves a partial line; cut it so later appends stay line-aligned
    std::filesystem::resize_file(log_path_, good_end);
  }
}

void TriageQueue::append(const std::string& line) {
  if (log_path_.empty()) return;
  std::ofstream out(log_path_, std::ios::binary | std::ios::app);
  out << line << '\n';
  out.flush();
  if (!out) throw LogError("cannot append to decision log " + log_path_.string());
}

TriageItem TriageQueue::enqueue(TriageItem item) {
  std::lock_guard lock(mutex_);
  if (auto it = items_.find(item.joint_id); it != items_.end()) return it->second;
  item.seq = order_.size() + 1;
  item.status = Status::kPending;
  item.decided_by.clear();
  item.decided_at.clear();
  item.enqueued_at = clock_();
  append(json{{"event", "enqueue"}, {"item", item_to_json(item, true)}}.dump());
  order_.push_back(item.joint_id);
  return items_.emplace(item.joint_id, std::move(item)).first->second;
}

DecideOutcome TriageQueue::decide(const std::string& joint_id, Status verdict, const std::string& operator_name,
                                  TriageItem* result) {
  if (verdict == Status::kPending) throw std::invalid_argument("verdict must be terminal");
  std::lock_guard lock(mutex_);
  auto it = items_.find(joint_id);
  if (it == items_.end()) return DecideOutcome::kNotFound;
  if (result) *result = it->second;
  if (it->second.status != Status::kPending) return DecideOutcome::kConflict;
  const std::string at = clock_();
  append(json{{"event", "decision"},
              {"joint_id", joint_id},
              {"verdict", to_string(verdict)},
              {"operator", operator_name},
              {"at", at}}
             .dump());
  it->second.status = verdict;
  it->second.decided_by = operator_name;
  it->second.decided_at = at;
  if (result) *result = it->second;
  return DecideOutcome::kOk;
}

std::optional<TriageItem> TriageQueue::get(const std::string& joint_id) const {
  std::lock_guard lock(mutex_);
  auto it = items_.find(joint_id);
  if (it == items_.end()) return std::nullopt;
  return it->second;
}

QueuePage TriageQueue::list(std::optional<Status> status, std::size_t page, std::size_t page_size) const {
  if (page == 0 || page_size == 0) throw std::invalid_argument("page and page_size start at 1");
  std::lock_guard lock(mutex_);
  QueuePage out;
  const std::size_t skip = (page - 1) * page_size;
  for (auto id = order_.rbegin(); id != order_.rend(); ++id) {
    const TriageItem& item = items_.at(*id);
    if (status && item.status != *status) continue;
    if (out.total >= skip && out.items.size() < page_size) out.items.push_back(item);
    ++out.total;
  }
  return out;
}

std::size_t TriageQueue::size() const {
  std::lock_guard lock(mutex_);
  return items_.size();
}

}  // namespace axi::service
