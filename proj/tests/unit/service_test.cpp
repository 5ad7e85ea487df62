#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "axi/ingest/synth.hpp"
#include "axi/models/checkpoint.hpp"
#include "axi/service/server.hpp"
#include "temp_dir.hpp"

namespace axi::service {
namespace {

using nlohmann::json;

constexpr std::int64_t kBound = 64;

models::Checkpoint untrained_checkpoint() {
  models::Checkpoint ck;
  ck.spec = models::ModelSpec::preset("shrunken", models::Arch::kCnn3d);
  ck.image_bound = kBound;
  ck.params = models::init_params<float>(ck.spec, 5);
  return ck;
}

std::vector<ingest::JointScene> scenes(std::size_t n) {
  ingest::SynthConfig cfg;
  cfg.seed = 12;
  cfg.joints = n;
  cfg.image_bound = kBound;
  cfg.defect_fraction = 0.5;
  return ingest::plan_synthetic(cfg);
}

json request_for(const ingest::JointScene& scene, std::size_t slices = 0) {
  const auto images = ingest::render_slices(scene, kBound);
  json s = json::array();
  const std::size_t n = slices ? slices : images.size();
  for (std::size_t k = 0; k < n; ++k) s.push_back(base64_encode(ingest::encode_pgm(images[k % images.size()])));
  const auto& r = scene.recorded_roi;
  return json{{"joint_id", scene.joint_id},
              {"board_type", scene.board_type},
              {"roi", {{"xmin", r.xmin}, {"xmax", r.xmax}, {"ymin", r.ymin}, {"ymax", r.ymax}}},
              {"slices", s}};
}

/// Counter clock so replayed timestamps can be compared exactly.
Clock counter_clock() {
  auto n = std::make_shared<int>(0);
  return [n] { return "t" + std::to_string(++*n); };
}

class Running {
 public:
  Running(double threshold, std::filesystem::path log, std::filesystem::path static_dir = {}) {
    ServiceOptions opt;
    opt.threshold = threshold;
    opt.log_path = std::move(log);
    opt.static_dir = std::move(static_dir);
    opt.clock = counter_clock();
    service = std::make_unique<TriageService>(untrained_checkpoint(), opt);
    port = service->bind("127.0.0.1", 0);
    thread = std::thread([this] { service->run(); });
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(60, 0);
    for (int i = 0; i < 200 && !client->Get("/api/queue"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  ~Running() {
    service->stop();
    thread.join();
  }

  httplib::Result post(const std::string& path, const json& body) {
    return client->Post(path, body.dump(), "application/json");
  }
  json get_json(const std::string& path, int expect = 200) {
    auto res = client->Get(path);
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, expect) << res->body;
    return json::parse(res->body);
  }

  std::unique_ptr<TriageService> service;
  int port = 0;
  std::thread thread;
  std::unique_ptr<httplib::Client> client;
};

TEST(Base64Test, RoundTripAndRejection) {
  for (const std::string& s : std::vector<std::string>{"", "a", "ab", "abc", "abcd", std::string("\0\xff\x10", 3)}) {
    EXPECT_EQ(base64_decode(base64_encode(s)), s);
  }
  EXPECT_EQ(base64_encode("Man"), "TWFu");
  EXPECT_THROW(base64_decode("TWF"), std::invalid_argument);
  EXPECT_THROW(base64_decode("TW!u"), std::invalid_argument);
  EXPECT_THROW(base64_decode("T==="), std::invalid_argument);
}

TEST(ServiceTest, SevenSlicesIsClientErrorNamingSix) {
  Running svc(0.5, {});
  auto res = svc.post("/api/score", request_for(scenes(1)[0], 7));
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  const std::string msg = json::parse(res->body).at("error");
  EXPECT_NE(msg.find("at most 6"), std::string::npos) << msg;
}

TEST(ServiceTest, MalformedPayloadsAreClientErrors) {
  Running svc(0.5, {});
  json good = request_for(scenes(1)[0]);
  std::vector<json> bad;
  bad.push_back(json::array());
  { json b = good; b.erase("roi"); bad.push_back(b); }
  { json b = good; b["roi"]["xmin"] = "3"; bad.push_back(b); }
  { json b = good; b["roi"]["xmax"] = kBound + 1; bad.push_back(b); }
  { json b = good; b["slices"][0] = "not base64!"; bad.push_back(b); }
  { json b = good; b["slices"] = json::array(); bad.push_back(b); }
  {
    json b = good;
    b["slices"][0] = base64_encode(ingest::encode_pgm(ingest::GrayImage(kBound / 2, kBound / 2)));
    bad.push_back(b);
  }
  {
    json b = good;
    b["slices"] = json::array({json{{"index", 2}, {"pgm", good["slices"][0]}}, json{{"index", 2}, {"pgm", good["slices"][1]}}});
    bad.push_back(b);
  }
  for (const auto& b : bad) {
    auto res = svc.post("/api/score", b);
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400) << b.dump().substr(0, 200) << " -> " << res->body;
  }
  auto res = svc.client->Post("/api/score", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  // still serving
  EXPECT_EQ(svc.post("/api/score", good)->status, 200);
}

TEST(ServiceTest, IdenticalRequestsGiveIdenticalProbability) {
  Running svc(0.0, {});
  const json req = request_for(scenes(1)[0]);
  const json a = json::parse(svc.post("/api/score", req)->body);
  const json b = json::parse(svc.post("/api/score", req)->body);
  EXPECT_EQ(a.at("score").get<double>(), b.at("score").get<double>());
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.at("flagged").get<bool>());
  EXPECT_EQ(svc.service->queue().size(), 1u);  // re-scoring does not re-enqueue
}

TEST(ServiceTest, FlaggedExactlyWhenScoreReachesThreshold) {
  std::vector<double> scores;
  const auto sc = scenes(12);
  {
    Running probe(1.0, {});
    for (const auto& s : sc) scores.push_back(json::parse(probe.post("/api/score", request_for(s))->body).at("score"));
  }
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const double tau = sorted[sorted.size() / 2];  // ties at tau must flag
  Running svc(tau, {});
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < sc.size(); ++i) {
    const json r = json::parse(svc.post("/api/score", request_for(sc[i]))->body);
    EXPECT_EQ(r.at("score").get<double>(), scores[i]);
    EXPECT_EQ(r.at("flagged").get<bool>(), scores[i] >= tau);
    EXPECT_EQ(svc.service->queue().get(sc[i].joint_id).has_value(), scores[i] >= tau);
    flagged += scores[i] >= tau;
  }
  EXPECT_GE(flagged, sc.size() / 2);
  EXPECT_EQ(svc.service->queue().size(), flagged);
}

TEST(ServiceTest, ThreeFlaggedJointsListAsPendingNewestFirstWithPaging) {
  Running svc(0.0, {});
  const auto sc = scenes(3);
  for (const auto& s : sc) ASSERT_EQ(svc.post("/api/score", request_for(s))->status, 200);
  const json all = svc.get_json("/api/queue?status=pending&page=1");
  ASSERT_EQ(all.at("items").size(), 3u);
  EXPECT_EQ(all.at("total"), 3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(all["items"][i].at("joint_id"), sc[2 - i].joint_id);
    EXPECT_EQ(all["items"][i].at("status"), "pending");
    EXPECT_FALSE(all["items"][i].contains("channels"));
  }
  const json p1 = svc.get_json("/api/queue?status=pending&page=1&page_size=2");
  const json p2 = svc.get_json("/api/queue?status=pending&page=2&page_size=2");
  const json p3 = svc.get_json("/api/queue?status=pending&page=3&page_size=2");
  EXPECT_EQ(p1["items"].size(), 2u);
  ASSERT_EQ(p2["items"].size(), 1u);
  EXPECT_EQ(p2["items"][0]["joint_id"], sc[0].joint_id);
  EXPECT_TRUE(p3["items"].empty());
  EXPECT_EQ(p3["total"], 3);
  svc.get_json("/api/queue?page=0", 400);
  svc.get_json("/api/queue?status=bogus", 400);
}

TEST(ServiceTest, SecondDecisionConflicts) {
  Running svc(0.0, {});
  const auto sc = scenes(2);
  for (const auto& s : sc) svc.post("/api/score", request_for(s));
  const std::string path = "/api/joint/" + sc[0].joint_id + "/decision";
  auto first = svc.post(path, {{"verdict", "confirmed_defect"}, {"operator", "ana"}});
  ASSERT_EQ(first->status, 200) << first->body;
  EXPECT_EQ(json::parse(first->body).at("status"), "confirmed_defect");
  auto second = svc.post(path, {{"verdict", "overridden_normal"}, {"operator", "bo"}});
  EXPECT_EQ(second->status, 409);
  const json item = svc.get_json("/api/joint/" + sc[0].joint_id);
  EXPECT_EQ(item.at("status"), "confirmed_defect");
  EXPECT_EQ(item.at("decided_by"), "ana");

  EXPECT_EQ(svc.get_json("/api/queue?status=pending").at("total"), 1);
  EXPECT_EQ(svc.get_json("/api/queue?status=confirmed_defect").at("total"), 1);
  EXPECT_EQ(svc.get_json("/api/queue?status=all").at("total"), 2);

  const std::string other = "/api/joint/" + sc[1].joint_id + "/decision";
  EXPECT_EQ(svc.post(other, {{"verdict", "pending"}, {"operator", "ana"}})->status, 400);
  EXPECT_EQ(svc.post(other, {{"verdict", "overridden_normal"}})->status, 400);
  EXPECT_EQ(svc.post(other, {{"verdict", "overridden_normal"}, {"operator", "bo"}})->status, 200);
}

TEST(ServiceTest, UnknownJointIsNotFound) {
  Running svc(0.0, {});
  svc.get_json("/api/joint/J999999", 404);
  EXPECT_EQ(svc.post("/api/joint/J999999/decision", {{"verdict", "confirmed_defect"}, {"operator", "a"}})->status,
            404);
}

TEST(ServiceTest, DetailCarriesSixChannelsWithPaddingMarked) {
  Running svc(0.0, {});
  json req = request_for(scenes(1)[0]);
  req["slices"] = json::array({req["slices"][0], req["slices"][0], req["slices"][0], req["slices"][0]});
  ASSERT_EQ(svc.post("/api/score", req)->status, 200);
  const json item = svc.get_json("/api/joint/" + req["joint_id"].get<std::string>());
  ASSERT_EQ(item.at("channels").size(), 6u);
  EXPECT_EQ(item.at("real_slices"), 4);
  EXPECT_EQ(item.at("padded"), json::array({false, false, false, false, true, true}));
  for (std::size_t c = 0; c < 6; ++c) {
    const auto img = ingest::decode_pgm(base64_decode(item["channels"][c].get<std::string>()));
    EXPECT_EQ(img.width, 16u);
    const bool any = std::any_of(img.pixels.begin(), img.pixels.end(), [](auto p) { return p != 0; });
    EXPECT_EQ(any, c < 4) << c;
  }
}

TEST(ServiceTest, RestartReplaysQueueAndDecisions) {
  testing::TempDir dir;
  const auto log = dir / "triage.jsonl";
  const auto sc = scenes(4);
  json before;
  {
    Running svc(0.0, log);
    for (const auto& s : sc) svc.post("/api/score", request_for(s));
    svc.post("/api/joint/" + sc[1].joint_id + "/decision", {{"verdict", "overridden_normal"}, {"operator", "ana"}});
    svc.post("/api/joint/" + sc[3].joint_id + "/decision", {{"verdict", "confirmed_defect"}, {"operator", "bo"}});
    before = svc.get_json("/api/queue?status=all");
    for (const auto& s : sc) before["detail"].push_back(svc.get_json("/api/joint/" + s.joint_id));
  }
  Running again(0.0, log);
  json after = again.get_json("/api/queue?status=all");
  for (const auto& s : sc) after["detail"].push_back(again.get_json("/api/joint/" + s.joint_id));
  EXPECT_EQ(after, before);
  EXPECT_EQ(again.post("/api/joint/" + sc[1].joint_id + "/decision",
                       {{"verdict", "confirmed_defect"}, {"operator", "cy"}})
                ->status,
            409);
  // re-scoring after restart does not duplicate
  again.post("/api/score", request_for(sc[0]));
  EXPECT_EQ(again.service->queue().size(), 4u);
}

TEST(TriageQueueTest, TornFinalLineIsDroppedAndLogStaysAppendable) {
  testing::TempDir dir;
  const auto log = dir / "q.jsonl";
  TriageItem item;
  item.joint_id = "J1";
  item.channels.assign(6, "");
  {
    TriageQueue q(log, counter_clock());
    q.enqueue(item);
  }
  { std::ofstream(log, std::ios::app) << R"({"event":"decision","joint_id":"J1","ver)"; }
  {
    TriageQueue q(log, counter_clock());
    ASSERT_EQ(q.get("J1")->status, Status::kPending);
    EXPECT_EQ(q.decide("J1", Status::kConfirmedDefect, "ana"), DecideOutcome::kOk);
  }
  TriageQueue q(log, counter_clock());
  EXPECT_EQ(q.get("J1")->status, Status::kConfirmedDefect);
  EXPECT_EQ(q.decide("J1", Status::kOverriddenNormal, "bo"), DecideOutcome::kConflict);
}

TEST(TriageQueueTest, CorruptLogIsRejected) {
  testing::TempDir dir;
  const auto log = dir / "q.jsonl";
  { std::ofstream(log) << R"({"event":"decision","joint_id":"J1","verdict":"confirmed_defect","operator":"a","at":"t"})" << '\n'; }
  EXPECT_THROW(TriageQueue(log, counter_clock()), LogError);
}

TEST(ServiceTest, StaticMountServesBundle) {
  testing::TempDir dir;
  { std::ofstream(dir / "index.html") << "<html>triage</html>"; }
  Running svc(0.5, {}, dir.path());
  auto res = svc.client->Get("/index.html");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "<html>triage</html>");
}

TEST(ServiceTest, ConcurrentScoringAgrees) {
  Running svc(0.0, {});
  const json req = request_for(scenes(1)[0]);
  const double expected = json::parse(svc.post("/api/score", req)->body).at("score");
  std::vector<double> got(8);
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < got.size(); ++t) {
    threads.emplace_back([&, t] {
      httplib::Client c("127.0.0.1", svc.port);
      auto res = c.Post("/api/score", req.dump(), "application/json");
      got[t] = res ? json::parse(res->body).at("score").get<double>() : -1.0;
    });
  }
  for (auto& th : threads) th.join();
  for (double g : got) EXPECT_EQ(g, expected);
}

}  // namespace
}  // namespace axi::service
