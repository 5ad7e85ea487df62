#include "axi/service/server.hpp"

#include <algorithm>
#include <cmath>

#include <boost/beast/core/detail/base64.hpp>
#include <httplib.h>

#include "axi/train/trainer.hpp"

namespace axi::service {

using nlohmann::json;
namespace b64 = boost::beast::detail::base64;

std::string base64_encode(std::string_view bytes) {
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
  std::string out(b64::decoded_size(text.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  // beast stops at the first '=' or foreign character
  std::size_t pad = 0;
  while (read + pad < text.size() && text[read + pad] == '=') ++pad;
  if (read + pad != text.size() || pad > 2) throw std::invalid_argument("invalid base64");
  out.resize(written);
  return out;
}

namespace {

std::int64_t int_field(const json& obj, const char* name) {
  if (!obj.contains(name) || !obj[name].is_number_integer()) {
    throw RequestError(400, std::string("field '") + name + "' must be an integer");
  }
  return obj[name].get<std::int64_t>();
}

std::string string_field(const json& obj, const char* name, bool required) {
  if (!obj.contains(name)) {
    if (required) throw RequestError(400, std::string("missing field '") + name + "'");
    return {};
  }
  if (!obj[name].is_string()) throw RequestError(400, std::string("field '") + name + "' must be a string");
  return obj[name].get<std::string>();
}

ingest::GrayImage decode_slice(const std::string& text, std::size_t position) {
  try {
    return ingest::decode_pgm(base64_decode(text));
  } catch (const std::exception& e) {
    throw RequestError(400, "slice " + std::to_string(position) + ": " + e.what());
  }
}

std::string render_channel(const preprocess::Patch& patch, std::size_t channel) {
  const std::size_t side = patch.side();
  ingest::GrayImage img(side, side);
  const float* d = patch.data.raw();
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const float v = d[(y * side + x) * preprocess::kChannels + channel];
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L));
    }
  }
  return base64_encode(ingest::encode_pgm(img));
}

json error_body(const std::string& message) { return json{{"error", message}}; }

}  // namespace

ScoreRequest parse_score_request(const json& body) {
  if (!body.is_object()) throw RequestError(400, "request body must be a JSON object");
  ScoreRequest req;
  req.joint_id = string_field(body, "joint_id", true);
  if (req.joint_id.empty()) throw RequestError(400, "joint_id must not be empty");
  req.board_type = string_field(body, "board_type", false);
  if (!body.contains("roi") || !body["roi"].is_object()) throw RequestError(400, "missing object 'roi'");
  const json& roi = body["roi"];
  req.roi = {int_field(roi, "xmin"), int_field(roi, "xmax"), int_field(roi, "ymin"), int_field(roi, "ymax")};

  if (!body.contains("slices") || !body["slices"].is_array()) throw RequestError(400, "missing array 'slices'");
  const json& slices = body["slices"];
  if (slices.empty()) throw RequestError(400, "at least one slice is required");
  if (slices.size() > ingest::kMaxSlices) {
    throw RequestError(400, "a joint has at most " + std::to_string(ingest::kMaxSlices) + " slices, got " +
                                std::to_string(slices.size()));
  }
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const json& s = slices[i];
    std::size_t index = i;
    std::string data;
    if (s.is_string()) {
      data = s.get<std::string>();
    } else if (s.is_object()) {
      const std::int64_t k = int_field(s, "index");
      if (k < 0 || k >= static_cast<std::int64_t>(ingest::kMaxSlices)) {
        throw RequestError(400, "slice index " + std::to_string(k) + " outside [0, 6)");
      }
      index = static_cast<std::size_t>(k);
      data = string_field(s, "pgm", true);
    } else {
      throw RequestError(400, "slice " + std::to_string(i) + " must be a base64 string or {index, pgm}");
    }
    if (std::find(req.indices.begin(), req.indices.end(), index) != req.indices.end()) {
      throw RequestError(400, "duplicate slice index " + std::to_string(index));
    }
    req.indices.push_back(index);
    req.slices.push_back(decode_slice(data, i));
  }
  return req;
}

json score_to_json(const ScoreResult& r) {
  return json{{"joint_id", r.joint_id},
              {"score", r.score},
              {"threshold", r.threshold},
              {"flagged", r.flagged},
              {"window",
               {{"cxmin", r.window.cxmin}, {"cymin", r.window.cymin}, {"cxmax", r.window.cxmax},
                {"cymax", r.window.cymax}}},
              {"real_slices", r.real_slices},
              {"status", r.item ? json(to_string(r.item->status)) : json(nullptr)}};
}

struct TriageService::Http {
  httplib::Server server;
};

TriageService::TriageService(models::Checkpoint checkpoint, ServiceOptions options)
    : checkpoint_(std::move(checkpoint)),
      options_(std::move(options)),
      queue_(options_.log_path, options_.clock),
      http_(std::make_unique<Http>()) {
  if (!(options_.threshold >= 0.0 && options_.threshold <= 1.0)) {
    throw std::invalid_argument("threshold must lie in [0, 1]");
  }
  checkpoint_.spec.validate();
  install_routes();
}

TriageService::~TriageService() { stop(); }

ScoreResult TriageService::score(const ScoreRequest& request) {
  if (request.slices.size() != request.indices.size()) throw std::invalid_argument("slices/indices mismatch");
  if (request.slices.empty() || request.slices.size() > ingest::kMaxSlices) {
    throw RequestError(400, "a joint has 1 to " + std::to_string(ingest::kMaxSlices) + " slices");
  }
  try {
    ingest::validate_roi(request.roi, checkpoint_.image_bound);
  } catch (const std::invalid_argument& e) {
    throw RequestError(400, std::string("roi: ") + e.what());
  }

  std::vector<std::size_t> order(request.slices.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return request.indices[a] < request.indices[b];
  });
  ingest::JointRecord record;
  record.joint_id = request.joint_id;
  record.board_type = request.board_type;
  record.roi = request.roi;
  std::vector<ingest::GrayImage> images;
  for (std::size_t i : order) {
    record.slices.push_back({request.indices[i], {}});
    images.push_back(request.slices[i]);
  }

  preprocess::Patch patch;
  try {
    patch = preprocess::extract_patch(record, images, checkpoint_.image_bound, {checkpoint_.spec.side});
  } catch (const preprocess::PatchError& e) {
    throw RequestError(400, e.what());
  }

  ScoreResult result;
  result.joint_id = request.joint_id;
  // infer mode only reads params, so concurrent requests may share them
  result.score = train::score_patches(checkpoint_.spec, checkpoint_.params, std::span(&patch, 1)).front();
  result.threshold = options_.threshold;
  result.flagged = result.score >= options_.threshold;
  result.window = patch.window;
  result.real_slices = patch.real_slices;

  if (result.flagged) {
    TriageItem item;
    item.joint_id = request.joint_id;
    item.board_type = request.board_type;
    item.score = result.score;
    item.threshold = options_.threshold;
    item.roi = request.roi;
    item.window = patch.window;
    item.real_slices = patch.real_slices;
    item.padded.fill(true);
    for (const auto& s : record.slices) item.padded[s.index] = false;
    for (std::size_t c = 0; c < preprocess::kChannels; ++c) item.channels.push_back(render_channel(patch, c));
    result.item = queue_.enqueue(std::move(item));
  }
  return result;
}

void TriageService::install_routes() {
  auto& srv = http_->server;
  auto reply = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };

  srv.set_exception_handler([reply](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const RequestError& e) {
      reply(res, e.status(), error_body(e.what()));
    } catch (const std::exception& e) {
      reply(res, 500, error_body(std::string("internal error: ") + e.what()));
    } catch (...) {
      reply(res, 500, error_body("internal error"));
    }
  });

  srv.Post("/api/score", [this, reply](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      throw RequestError(400, std::string("malformed JSON: ") + e.what());
    }
    reply(res, 200, score_to_json(score(parse_score_request(body))));
  });

  srv.Get("/api/queue", [this, reply](const httplib::Request& req, httplib::Response& res) {
    std::optional<Status> status = Status::kPending;
    if (req.has_param("status")) {
      const std::string s = req.get_param_value("status");
      if (s == "all") {
        status.reset();
      } else if (!(status = parse_status(s))) {
        throw RequestError(400, "unknown status '" + s + "'");
      }
    }
    auto positive = [&](const char* name, std::size_t fallback) -> std::size_t {
      if (!req.has_param(name)) return fallback;
      const std::string v = req.get_param_value(name);
      std::size_t used = 0;
      long long n = 0;
      try {
        n = std::stoll(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != v.size() || n < 1 || n > 1'000'000) {
        throw RequestError(400, std::string(name) + " must be a positive integer");
      }
      return static_cast<std::size_t>(n);
    };
    const std::size_t page = positive("page", 1);
    const std::size_t page_size = positive("page_size", 20);
    const QueuePage p = queue_.list(status, page, page_size);
    json items = json::array();
    for (const auto& item : p.items) items.push_back(item_to_json(item, false));
    reply(res, 200,
          json{{"items", items},
               {"page", page},
               {"page_size", page_size},
               {"total", p.total},
               {"status", status ? to_string(*status) : "all"}});
  });

  srv.Get(R"(/api/joint/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto item = queue_.get(id);
    if (!item) throw RequestError(404, "joint " + id + " is not in the triage queue");
    reply(res, 200, item_to_json(*item, true));
  });

  srv.Post(R"(/api/joint/([^/]+)/decision)", [this, reply](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      throw RequestError(400, std::string("malformed JSON: ") + e.what());
    }
    if (!body.is_object()) throw RequestError(400, "request body must be a JSON object");
    const std::string verdict_text = string_field(body, "verdict", true);
    const std::string operator_name = string_field(body, "operator", true);
    const auto verdict = parse_status(verdict_text);
    if (!verdict || *verdict == Status::kPending) {
      throw RequestError(400, "verdict must be confirmed_defect or overridden_normal");
    }
    if (operator_name.empty()) throw RequestError(400, "operator must not be empty");
    TriageItem item;
    switch (queue_.decide(id, *verdict, operator_name, &item)) {
      case DecideOutcome::kNotFound: throw RequestError(404, "joint " + id + " is not in the triage queue");
      case DecideOutcome::kConflict:
        reply(res, 409,
              json{{"error", "joint " + id + " was already decided"}, {"item", item_to_json(item, false)}});
        return;
      case DecideOutcome::kOk: break;
    }
    reply(res, 200, item_to_json(item, false));
  });

  if (!options_.static_dir.empty()) {
    if (!srv.set_mount_point("/", options_.static_dir.string())) {
      throw std::invalid_argument("static directory " + options_.static_dir.string() + " does not exist");
    }
  }
}

int TriageService::bind(const std::string& host, int port) {
  if (port == 0) return http_->server.bind_to_any_port(host);
  return http_->server.bind_to_port(host, port) ? port : -1;
}

bool TriageService::run() { return http_->server.listen_after_bind(); }

void TriageService::stop() {
  if (http_) http_->server.stop();
}

}  // namespace axi::service
