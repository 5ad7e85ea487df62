#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "axi/ingest/manifest.hpp"
#include "axi/preprocess/patch.hpp"

namespace axi::service {

enum class Status { kPending, kConfirmedDefect, kOverriddenNormal };

std::string to_string(Status status);
/// Accepts "pending", "confirmed_defect", "overridden_normal".
std::optional<Status> parse_status(const std::string& text);

struct TriageItem {
  std::uint64_t seq = 0;  // enqueue order, newest has the largest
  std::string joint_id;
  std::string board_type;
  double score = 0;      // P(defect)
  double threshold = 0;  // tau in force when the joint was flagged
  ingest::Roi roi;
  preprocess::CropWindow window;
  std::size_t real_slices = 0;
  std::array<bool, preprocess::kChannels> padded{};  // channel had no slice
  std::vector<std::string> channels;                 // 6 base64 PGM images of the patch
  std::string enqueued_at;

  Status status = Status::kPending;
  std::string decided_by;
  std::string decided_at;

  bool operator==(const TriageItem&) const = default;
};

class LogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Returns an ISO-8601 UTC timestamp. Injectable so tests get stable times.
using Clock = std::function<std::string()>;
std::string utc_now();

struct QueuePage {
  std::vector<TriageItem> items;  // newest first
  std::size_t total = 0;          // matching items across all pages
};

enum class DecideOutcome { kOk, kNotFound, kConflict };

/// Triage queue backed by a line-delimited JSON event log. Every mutation is
/// appended (and flushed) before it becomes visible; the constructor replays
/// the log, so state after a restart equals state before it.
class TriageQueue {
 public:
  /// Empty log_path keeps everything in memory.
  explicit TriageQueue(std::filesystem::path log_path = {}, Clock clock = utc_now);

  /// Adds a pending item unless the joint is already queued. Returns the
  /// stored item (the earlier one if it was already there).
  TriageItem enqueue(TriageItem item);

  /// One transition pending -> confirmed_defect | overridden_normal.
  DecideOutcome decide(const std::string& joint_id, Status verdict, const std::string& operator_name,
                       TriageItem* result = nullptr);

  std::optional<TriageItem> get(const std::string& joint_id) const;
  /// page is 1-based. status empty lists everything.
  QueuePage list(std::optional<Status> status, std::size_t page, std::size_t page_size) const;
  std::size_t size() const;

 private:
  void replay();
  void append(const std::string& line);

  std::filesystem::path log_path_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::map<std::string, TriageItem> items_;
  std::vector<std::string> order_;  // joint ids by seq
};

/// JSON views, shared by the event log and the HTTP layer.
nlohmann::json item_to_json(const TriageItem& item, bool with_channels);
TriageItem item_from_json(const nlohmann::json& j);

}  // namespace axi::service
