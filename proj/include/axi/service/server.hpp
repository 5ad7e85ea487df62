#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "axi/ingest/pgm.hpp"
#include "axi/models/checkpoint.hpp"
#include "axi/service/triage.hpp"

namespace axi::service {

std::string base64_encode(std::string_view bytes);
/// Throws std::invalid_argument on characters outside the alphabet or bad padding.
std::string base64_decode(std::string_view text);

/// Error that maps to an HTTP status; the message goes into the body.
class RequestError : public std::runtime_error {
 public:
  RequestError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct ScoreRequest {
  std::string joint_id;
  std::string board_type;
  ingest::Roi roi;
  std::vector<std::size_t> indices;  // focal-depth index per slice
  std::vector<ingest::GrayImage> slices;
};

/// Body: {"joint_id", "board_type", "roi": {xmin,xmax,ymin,ymax},
/// "slices": [base64 PGM, ...] or [{"index": k, "pgm": base64}, ...]}.
/// Plain strings take their list position as index. Throws RequestError(400).
ScoreRequest parse_score_request(const nlohmann::json& body);

struct ScoreResult {
  std::string joint_id;
  double score = 0;
  double threshold = 0;
  bool flagged = false;
  preprocess::CropWindow window;
  std::size_t real_slices = 0;
  std::optional<TriageItem> item;  // set when flagged
};

nlohmann::json score_to_json(const ScoreResult& result);

struct ServiceOptions {
  double threshold = 0.5;
  std::filesystem::path log_path;    // empty: in-memory queue
  std::filesystem::path static_dir;  // empty: no UI mount
  Clock clock = utc_now;
};

/// One loaded checkpoint, one threshold, one triage queue, and the HTTP
/// routes over them. Parameters are never written after construction, so
/// scoring runs concurrently on the server's worker threads.
class TriageService {
 public:
  TriageService(models::Checkpoint checkpoint, ServiceOptions options);
  ~TriageService();
  TriageService(const TriageService&) = delete;
  TriageService& operator=(const TriageService&) = delete;

  ScoreResult score(const ScoreRequest& request);
  TriageQueue& queue() { return queue_; }
  double threshold() const { return options_.threshold; }

  /// port 0 picks a free one. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  bool run();
  void stop();

 private:
  struct Http;
  void install_routes();

  models::Checkpoint checkpoint_;
  ServiceOptions options_;
  TriageQueue queue_;
  std::unique_ptr<Http> http_;
};

}  // namespace axi::service
