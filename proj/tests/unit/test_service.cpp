#include "cephkit/error.hpp"
#include "cephkit/service.hpp"
#include "stub_backend.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <filesystem>
#include <random>
#include <thread>

using namespace cephkit;
using json = nlohmann::json;

namespace {

bool is_envelope(const HttpResponse& r) {
  if (r.status < 400) return false;
  try {
    const auto j = json::parse(r.body);
    return j.is_object() && j.contains("code") && j["code"].is_string() && j.contains("message") &&
           j["message"].is_string();
  } catch (...) {
    return false;
  }
}

struct LiveServer {
  explicit LiveServer(ApiService& api) {
    api.mount(server);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LiveServer() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10, 0);
    return c;
  }
  httplib::Server server;
  int port = 0;
  std::thread thread;
};

std::string fixture_body(const std::string& name) { return testsupport::slurp(testsupport::fixture(name + ".json")); }

}  // namespace

TEST_CASE("bind address parsing") {
  CHECK(parse_bind_addr("127.0.0.1:8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
  CHECK(parse_bind_addr("0.0.0.0:1") == std::pair<std::string, int>{"0.0.0.0", 1});
  CHECK_THROWS_AS(parse_bind_addr("localhost"), Error);
  CHECK_THROWS_AS(parse_bind_addr("h:0"), Error);
  CHECK_THROWS_AS(parse_bind_addr("h:70000"), Error);
  CHECK_THROWS_AS(parse_bind_addr("h:80x"), Error);
}

TEST_CASE("analysis endpoints equal direct library results") {
  ApiService api(AnalysisConfig{}, CompletionBackendConfig{}, ServiceConfig{});
  const AnalysisConfig cfg;
  for (const auto& name : testsupport::fixture_cases()) {
    CAPTURE(name);
    const auto body = fixture_body(name);
    const auto created = api.create_analysis(body);
    REQUIRE(created.status == 201);
    const auto j = json::parse(created.body);
    const auto direct = run_case(parse_landmarks_json(body), cfg);
    REQUIRE(j["measurements"].size() == direct.analysis.batch.results.size());
    for (std::size_t i = 0; i < direct.analysis.batch.results.size(); ++i) {
      const auto& r = direct.analysis.batch.results[i];
      CHECK(j["measurements"][i]["id"] == std::string(measurement_name(r.id)));
      CHECK(j["measurements"][i]["value"].get<double>() == r.value);
    }
    for (std::size_t i = 0; i < direct.analysis.deviations.size(); ++i) {
      CHECK(j["deviations"][i]["z"].get<double>() == direct.analysis.deviations[i].z);
    }

    const auto id = j["analysis_id"].get<std::string>();
    const auto fetched = api.get_analysis(id);
    CHECK(fetched.status == 200);
    CHECK(fetched.body == created.body);

    const auto text = api.get_report(id, {});
    CHECK(text.status == 200);
    CHECK(text.content_type.starts_with("text/plain"));
    CHECK(text.body == render_report(make_report(direct, Language::En, cfg), ReportFormat::Text));
    CHECK(api.get_report(id, {{"format", "markdown"}, {"lang", "zh"}}).content_type.starts_with("text/markdown"));
    CHECK(json::parse(api.get_report(id, {{"format", "structured"}}).body)["language"] == "en");
    CHECK(is_envelope(api.get_report(id, {{"format", "pdf"}})));
    CHECK(is_envelope(api.get_report(id, {{"lang", "fr"}})));
  }
}

TEST_CASE("concurrent identical posts differ only in id and timestamp") {
  ApiService api(AnalysisConfig{}, CompletionBackendConfig{}, ServiceConfig{});
  const auto body = fixture_body("synthetic_case_02");
  std::vector<std::string> out(8);
  std::vector<std::thread> ts;
  for (std::size_t i = 0; i < out.size(); ++i) ts.emplace_back([&, i] { out[i] = api.create_analysis(body).body; });
  for (auto& t : ts) t.join();
  auto strip = [](const std::string& s) {
    auto j = json::parse(s);
    j.erase("analysis_id");
    j.erase("created_at_ms");
    return j.dump();
  };
  for (const auto& o : out) CHECK(strip(o) == strip(out[0]));
  CHECK(api.analyses().size() == 8);
}

TEST_CASE("prompt endpoint") {
  ApiService api(AnalysisConfig{}, CompletionBackendConfig{}, ServiceConfig{});
  const auto id = json::parse(api.create_analysis(fixture_body("synthetic_case_03")).body)["analysis_id"].get<std::string>();
  const auto p = api.get_prompt(id, {{"seed", "7"}});
  REQUIRE(p.status == 200);
  const auto j = json::parse(p.body);
  CHECK(j["seed"] == 7);
  CHECK(testsupport::parse_prompt(j["text"].get<std::string>(), kDefaultImageToken));
  CHECK(j["text"].get<std::string>().find("ANB angle: 6.14") != std::string::npos);
  CHECK(api.get_prompt(id, {{"seed", "7"}}).body == p.body);
  const auto tok = json::parse(api.get_prompt(id, {{"seed", "1"}, {"image_token", "<Img>"}}).body);
  CHECK(tok["text"].get<std::string>().starts_with("###Doctor: <Img>"));
  CHECK(is_envelope(api.get_prompt(id, {{"seed", "-1"}})));
  CHECK(is_envelope(api.get_prompt(id, {{"seed", "abc"}})));
  CHECK(api.get_prompt("missing", {}).status == 404);

  // A case lacking one of the nine reference values cannot be prompted.
  auto doc = json::parse(fixture_body("synthetic_case_01"));
  doc["landmarks"].erase("Pog");
  const auto partial = api.create_analysis(doc.dump());
  REQUIRE(partial.status == 201);
  const auto pid = json::parse(partial.body)["analysis_id"].get<std::string>();
  const auto missing = api.get_prompt(pid, {{"seed", "1"}});
  CHECK(missing.status == 422);
  CHECK(json::parse(missing.body)["code"] == "MISSING_MEASUREMENT");
}

TEST_CASE("error statuses and codes") {
  ApiService api(AnalysisConfig{}, CompletionBackendConfig{}, ServiceConfig{});
  auto code = [](const HttpResponse& r) { return json::parse(r.body)["code"].get<std::string>(); };

  auto nocal = json::parse(fixture_body("synthetic_case_01"));
  nocal.erase("calibration_mm_per_px");
  const auto r1 = api.create_analysis(nocal.dump());
  CHECK(r1.status == 422);
  CHECK(code(r1) == "MISSING_CALIBRATION");

  const auto r2 = api.create_analysis("{not json");
  CHECK(r2.status == 400);
  CHECK(code(r2) == "PARSE_ERROR");
  CHECK(json::parse(r2.body)["details"].contains("line"));

  auto oob = json::parse(fixture_body("synthetic_case_01"));
  oob["landmarks"]["S"] = {99999, 5};
  CHECK(code(api.create_analysis(oob.dump())) == "OUT_OF_BOUNDS");

  CHECK(api.get_analysis("nope").status == 404);
  CHECK(code(api.get_analysis("nope")) == "UNKNOWN_ANALYSIS");
  CHECK(api.get_session("nope").status == 404);
  CHECK(code(api.create_session(R"({"analysis_id": "nope"})")) == "UNKNOWN_ANALYSIS");
  CHECK(api.create_session(R"({"analysis_id": 5})").status == 400);
  CHECK(api.post_message("nope", R"({"content": "hi"})").status == 404);
}

TEST_CASE("session endpoints with backend disabled") {
  ApiService api(AnalysisConfig{}, CompletionBackendConfig{}, ServiceConfig{});
  const auto id = json::parse(api.create_analysis(fixture_body("synthetic_case_03")).body)["analysis_id"].get<std::string>();
  const auto opened = api.create_session(json{{"analysis_id", id}}.dump());
  REQUIRE(opened.status == 201);
  const auto sid = json::parse(opened.body)["session_id"].get<std::string>();
  const auto msg = api.post_message(sid, R"({"content": "what is the ANB angle?"})");
  REQUIRE(msg.status == 200);
  CHECK(json::parse(msg.body)["reply"].get<std::string>().find("6.14") != std::string::npos);
  const auto hist = json::parse(api.get_session(sid).body);
  CHECK(hist["messages"].size() == 3);
  CHECK(hist["messages"][0]["role"] == "system");
  CHECK(hist["messages"][1]["role"] == "user");
  CHECK(hist["messages"][2]["role"] == "assistant");

  const auto empty = api.post_message(sid, R"({"content": ""})");
  CHECK(empty.status == 400);
  CHECK(json::parse(empty.body)["code"] == "EMPTY_MESSAGE");
  CHECK(is_envelope(api.post_message(sid, "[]")));

  const auto h = json::parse(api.healthz().body);
  CHECK(h["status"] == "ok");
  CHECK(h["backend_enabled"] == false);
  CHECK(h["version"] == std::string(version()));
}

TEST_CASE("fuzz: malformed bodies always yield an error envelope") {
  ApiService api(AnalysisConfig{}, CompletionBackendConfig{}, ServiceConfig{});
  const auto id = json::parse(api.create_analysis(fixture_body("synthetic_case_01")).body)["analysis_id"].get<std::string>();
  const auto sid = json::parse(api.create_session(json{{"analysis_id", id}}.dump()).body)["session_id"].get<std::string>();
  const auto seed_doc = fixture_body("synthetic_case_01");

  std::mt19937_64 rng(4242);
  auto mutate = [&](std::string s) {
    std::uniform_int_distribution<int> op(0, 5);
    const int rounds = 1 + static_cast<int>(rng() % 4);
    for (int k = 0; k < rounds && !s.empty(); ++k) {
      const std::size_t pos = rng() % s.size();
      switch (op(rng)) {
        case 0: s.erase(pos, 1 + rng() % 8); break;
        case 1: s.insert(pos, 1, static_cast<char>(rng() % 256)); break;
        case 2: s[pos] = "{}[]:,\"-e.0x\\"[rng() % 13]; break;
        case 3: s = s.substr(0, pos); break;
        case 4: s.insert(pos, "\"S\": [1, 2], "); break;
        default: s.replace(pos, 1, "null"); break;
      }
    }
    return s;
  };
  const std::vector<std::string> fixed = {"", " ", "null", "[]", "{}", "42", "\"str\"", "{\"landmarks\": null}",
                                          "{\"landmarks\": {}, \"calibration_mm_per_px\": 0.1}",
                                          "{\"landmarks\": {\"S\": [1, 2]}, \"calibration_mm_per_px\": \"x\"}",
                                          std::string(1, '\0'), "\xff\xfe{", "{\"content\": 5}"};
  int checked = 0, bad = 0;
  auto check = [&](const HttpResponse& r) {
    ++checked;
    if (r.status >= 400 && !is_envelope(r)) ++bad;
  };
  for (const auto& b : fixed) {
    check(api.create_analysis(b));
    check(api.create_session(b));
    check(api.post_message(sid, b));
  }
  int envelopes = 0;
  for (int i = 0; i < 1200; ++i) {
    const auto body = mutate(seed_doc);
    const auto r = api.create_analysis(body);
    check(r);
    if (r.status >= 400) ++envelopes;
    check(api.create_session(mutate(json{{"analysis_id", id}, {"lang", "en"}}.dump())));
    check(api.post_message(sid, mutate(R"({"content": "ANB?"})")));
  }
  CHECK(checked >= 1000);
  CHECK(envelopes >= 1000);
  CHECK(bad == 0);
}

TEST_CASE("http transport: auth, cors, routing and envelopes") {
  ServiceConfig sc;
  sc.api_key = "k-123";
  sc.cors_origins = {"http://localhost:5173"};
  ApiService api(AnalysisConfig{}, CompletionBackendConfig{}, sc);
  LiveServer live(api);
  auto cli = live.client();

  auto health = cli.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);

  auto denied = cli.Post("/api/v1/analyses", fixture_body("synthetic_case_01"), "application/json");
  REQUIRE(denied);
  CHECK(denied->status == 401);
  CHECK(json::parse(denied->body)["code"] == "UNAUTHORIZED");

  httplib::Headers auth = {{"Authorization", "Bearer k-123"}, {"Origin", "http://localhost:5173"}};
  auto created = cli.Post("/api/v1/analyses", auth, fixture_body("synthetic_case_01"), "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  CHECK(created->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
  const auto id = json::parse(created->body)["analysis_id"].get<std::string>();

  httplib::Headers key = {{"X-API-Key", "k-123"}, {"Origin", "http://evil.example"}};
  auto report = cli.Get("/api/v1/analyses/" + id + "/report?format=markdown&lang=zh", key);
  REQUIRE(report);
  CHECK(report->status == 200);
  CHECK(report->get_header_value("Content-Type").starts_with("text/markdown"));
  CHECK_FALSE(report->has_header("Access-Control-Allow-Origin"));

  auto prompt = cli.Get("/api/v1/analyses/" + id + "/prompt?seed=3", key);
  REQUIRE(prompt);
  CHECK(json::parse(prompt->body)["seed"] == 3);

  auto preflight = cli.Options("/api/v1/analyses", {{"Origin", "http://localhost:5173"}});
  REQUIRE(preflight);
  CHECK(preflight->status == 204);

  auto unknown = cli.Get("/api/v1/nothing", key);
  REQUIRE(unknown);
  CHECK(unknown->status == 404);
  CHECK(json::parse(unknown->body).contains("code"));

  auto sess = cli.Post("/api/v1/sessions", key, json{{"analysis_id", id}}.dump(), "application/json");
  REQUIRE(sess);
  CHECK(sess->status == 201);
  const auto sid = json::parse(sess->body)["session_id"].get<std::string>();
  auto msg = cli.Post("/api/v1/sessions/" + sid + "/messages", key, R"({"content": "SNB?"})", "application/json");
  REQUIRE(msg);
  CHECK(msg->status == 200);
  auto hist = cli.Get("/api/v1/sessions/" + sid, key);
  REQUIRE(hist);
  CHECK(json::parse(hist->body)["messages"].size() == 3);
}

TEST_CASE("http transport: stub backend surfaces verbatim, 502 under error policy, token never leaks") {
  const std::string token = "sk-live-TOKEN-93ab";
  testsupport::StubBackend stub("Recorded completion text.");
  CompletionBackendConfig bc;
  bc.enabled = true;
  bc.endpoint = stub.endpoint();
  bc.model = "stub";
  bc.api_key = token;
  bc.timeout_s = 5;

  const auto persist = std::filesystem::temp_directory_path() / ("cephkit_persist_" + std::to_string(::getpid()));
  std::filesystem::remove_all(persist);
  ServiceConfig sc;
  sc.persist_dir = persist.string();
  sc.journal_path = (persist / "sessions.jsonl").string();
  ApiService api(AnalysisConfig{}, bc, sc);
  std::string logs;
  api.dialogue().set_log_sink([&](std::string_view l) { logs += std::string(l) + "\n"; });
  LiveServer live(api);
  auto cli = live.client();

  std::string all_bodies;
  auto created = cli.Post("/api/v1/analyses", fixture_body("synthetic_case_02"), "application/json");
  REQUIRE(created);
  all_bodies += created->body;
  const auto id = json::parse(created->body)["analysis_id"].get<std::string>();
  auto sess = cli.Post("/api/v1/sessions", json{{"analysis_id", id}}.dump(), "application/json");
  REQUIRE(sess);
  all_bodies += sess->body;
  const auto sid = json::parse(sess->body)["session_id"].get<std::string>();
  auto msg = cli.Post("/api/v1/sessions/" + sid + "/messages", R"({"content": "diagnosis?"})", "application/json");
  REQUIRE(msg);
  all_bodies += msg->body;
  CHECK(json::parse(msg->body)["reply"] == "Recorded completion text.");
  auto hist = cli.Get("/api/v1/sessions/" + sid);
  all_bodies += hist->body;
  all_bodies += cli.Get("/healthz")->body;
  CHECK(json::parse(cli.Get("/healthz")->body)["backend_enabled"] == true);

  CHECK(all_bodies.find(token) == std::string::npos);
  CHECK(logs.find(token) == std::string::npos);
  for (const auto& e : std::filesystem::recursive_directory_iterator(persist)) {
    if (e.is_regular_file()) CHECK(testsupport::slurp(e.path()).find(token) == std::string::npos);
  }
  std::filesystem::remove_all(persist);

  CompletionBackendConfig dead = bc;
  dead.endpoint = testsupport::dead_endpoint();
  dead.fallback = FallbackPolicy::Error;
  dead.timeout_s = 2;
  ApiService api2(AnalysisConfig{}, dead, ServiceConfig{});
  api2.dialogue().set_log_sink([&](std::string_view l) { logs += std::string(l) + "\n"; });
  const auto id2 = json::parse(api2.create_analysis(fixture_body("synthetic_case_01")).body)["analysis_id"].get<std::string>();
  const auto sid2 = json::parse(api2.create_session(json{{"analysis_id", id2}}.dump()).body)["session_id"].get<std::string>();
  const auto failed = api2.post_message(sid2, R"({"content": "hello"})");
  CHECK(failed.status == 502);
  CHECK(json::parse(failed.body)["code"] == "BACKEND_UNREACHABLE");
  CHECK(failed.body.find(token) == std::string::npos);
  CHECK(logs.find(token) == std::string::npos);
}
