// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.
#include "cephkit/error.hpp"
#include "cephkit/service.hpp"
#include "stub_backend.hpp"
#include "test_support.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <thread>

#include <unistd.h>

using namespace cephkit;
using json = nlohmann::json;
namespace fs = std::filesystem;
using L = LandmarkId;
using M = MeasurementId;

namespace {

// Pinned tolerances.
constexpr double kRowArithmeticTol = 0.005;
constexpr double kPropertyTol = 1e-9;
constexpr double kOracleTol = 1e-6;
constexpr double kRowArithmeticBudgetS = 1.0;
constexpr double kPropertyBudgetS = 30.0;
constexpr int kPropertyCases = 10000;
constexpr int kPromptSamples = 1000;
constexpr int kFuzzCases = 1000;

struct Outcome {
  bool ok = true;
  std::string detail;
  void fail(const std::string& why) {
    if (ok) detail = why;
    ok = false;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cephkit_accept_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::map<std::string, std::string> read_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) out[e.path().filename().string()] = testsupport::slurp(e.path());
  }
  return out;
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
  httplib::Server server;
  int port = 0;
  std::thread thread;
};

// 1 -------------------------------------------------------------------------
Outcome row_arithmetic() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const std::array<double, 3> printed_anb = {-1.29, 0.27, 6.14};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& row = testsupport::reference_rows()[i];
    const double diff = row.values[0] - row.values[1];
    if (std::abs(diff - printed_anb[i]) > kRowArithmeticTol) o.fail("row " + std::to_string(i + 1) + " SNA-SNB=" + fmt(diff));
    // Same arithmetic through the engine on the row-valued fixture.
    const auto a = analyze(testsupport::load_fixture("synthetic_case_0" + std::to_string(i + 1)).landmarks,
                           default_norms(), default_thresholds());
    const double anb = find(a.batch.results, M::ANB)->value;
    if (std::abs(anb - printed_anb[i]) > kRowArithmeticTol) o.fail("fixture " + std::to_string(i + 1) + " ANB=" + fmt(anb));
  }
  const double dt = seconds_since(t0);
  if (dt >= kRowArithmeticBudgetS) o.fail("took " + fmt(dt) + " s");
  if (o.ok) o.detail = "3 rows within " + fmt(kRowArithmeticTol) + " in " + fmt(dt) + " s";
  return o;
}

// 2 -------------------------------------------------------------------------
Outcome row_formatting() {
  Outcome o;
  int i = 0;
  for (const auto& row : testsupport::reference_rows()) {
    ++i;
    const auto got = format_reference_suffix(testsupport::results_from_row(row), Language::En);
    const auto want = testsupport::normalize_english_row(row.english);
    if (got != want) o.fail("row " + std::to_string(i) + " differs: " + got);
  }
  const auto joined = [&] {
    std::string s;
    for (const auto& row : testsupport::reference_rows())
      s += format_reference_suffix(testsupport::results_from_row(row), Language::En);
    return s;
  }();
  for (const char* needle : {"SNB angle: 85.7,", "L1-NB distance: 6.6,", "Po-NB distance: 0.08", "Po-NB distance: -3.56"}) {
    if (joined.find(needle) == std::string::npos) o.fail(std::string("missing ") + needle);
  }
  if (o.ok) o.detail = "3 rows exact after newline/period normalization";
  return o;
}

// 3 -------------------------------------------------------------------------
Outcome prompt_grammar() {
  Outcome o;
  const auto& ins = default_resources().instructions;
  int parsed = 0;
  for (int i = 0; i < kPromptSamples; ++i) {
    const auto& row = testsupport::reference_rows()[i % 3];
    const auto lang = i % 2 ? Language::Zh : Language::En;
    const std::uint64_t seed = 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(i + 1);
    const auto rs = testsupport::results_from_row(row);
    const auto a = build_prompt(rs, lang, seed, ins);
    const auto b = build_prompt(rs, lang, seed, ins);
    if (a.text != b.text) o.fail("non-deterministic at seed " + std::to_string(seed));
    const auto p = testsupport::parse_prompt(a.text, kDefaultImageToken);
    if (!p) {
      o.fail("unparseable prompt: " + a.text.substr(0, 80));
      continue;
    }
    if (p->instruction != ins.get(lang)[a.instruction_index]) o.fail("instruction mismatch");
    if (p->suffix != format_reference_suffix(rs, lang)) o.fail("suffix mismatch");
    ++parsed;
  }
  if (o.ok) o.detail = std::to_string(parsed) + " prompts parsed; same-seed output byte-identical";
  return o;
}

// 4 -------------------------------------------------------------------------
Outcome geometry_properties() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20241018);
  std::uniform_real_distribution<double> coord(0, 2000), ang(-std::numbers::pi, std::numbers::pi), sc(0.2, 5.0),
      tr(-2000, 2000), off(5.0, 175.0), len(50, 1500);
  double worst_angle = 0, worst_anb = 0;
  int sign_failures = 0;
  for (int i = 0; i < kPropertyCases; ++i) {
    const double th = ang(rng), k = sc(rng), tx = tr(rng), ty = tr(rng);
    auto T = [&](Point2 p) {
      return Point2{k * (std::cos(th) * p.x - std::sin(th) * p.y) + tx, k * (std::sin(th) * p.x + std::cos(th) * p.y) + ty};
    };
    const Point2 v{coord(rng), coord(rng)}, p1{coord(rng), coord(rng)}, p2{coord(rng), coord(rng)},
        p3{coord(rng), coord(rng)};
    worst_angle = std::max(worst_angle, std::abs(angle_at_vertex(v, p1, p2) - angle_at_vertex(T(v), T(p1), T(p2))));
    worst_angle = std::max(worst_angle, std::abs(directed_line_angle(v, p1, p2, p3) -
                                                 directed_line_angle(T(v), T(p1), T(p2), T(p3))));
    if (signed_point_line_distance(p3, v, p1) != -signed_point_line_distance(p3, p1, v)) ++sign_failures;

    // ANB on the constrained class: A and B on the anterior side of N->S.
    LandmarkSet s;
    s.orientation = Orientation::FacingRight;
    const Point2 n{1000, 1000};
    const double ns = ang(rng);
    auto at = [&](double t, double r) { return Point2{n.x + r * std::cos(t), n.y + r * std::sin(t)}; };
    s.points[L::N] = n;
    s.points[L::S] = at(ns, len(rng));
    s.points[L::A] = at(ns - off(rng) * std::numbers::pi / 180, len(rng));
    s.points[L::B] = at(ns - off(rng) * std::numbers::pi / 180, len(rng));
    const double anb = compute(s, M::ANB).value;
    const Point2 A = s.at(L::A), B = s.at(L::B);
    const double ax = A.x - n.x, ay = A.y - n.y, bx = B.x - n.x, by = B.y - n.y;
    const double geometric = -std::atan2(bx * ay - by * ax, bx * ax + by * ay) * 180 / std::numbers::pi;
    worst_anb = std::max(worst_anb, std::abs(anb - geometric));
  }
  const double dt = seconds_since(t0);
  if (worst_angle > kPropertyTol) o.fail("angle invariance error " + fmt(worst_angle));
  if (sign_failures) o.fail(std::to_string(sign_failures) + " sign-flip failures");
  if (worst_anb > kPropertyTol) o.fail("ANB vs geometric oracle error " + fmt(worst_anb));
  if (dt >= kPropertyBudgetS) o.fail("took " + fmt(dt) + " s");
  if (o.ok) {
    o.detail = std::to_string(kPropertyCases) + " cases; max angle err " + fmt(worst_angle) + ", max ANB err " +
               fmt(worst_anb) + ", " + fmt(dt) + " s";
  }
  return o;
}

// 5 -------------------------------------------------------------------------
Outcome oracle_equivalence() {
  Outcome o;
  double worst = 0;
  int compared = 0;
  for (const auto& name : testsupport::fixture_cases()) {
    const auto frozen = testsupport::expected_for(name)["measurements"];
    const auto a = analyze(testsupport::load_fixture(name).landmarks, default_norms(), default_thresholds());
    if (a.batch.results.size() != kMeasurementCount) o.fail(name + ": only " + std::to_string(a.batch.results.size()));
    for (const auto& r : a.batch.results) {
      const double d = std::abs(r.value - frozen[std::string(measurement_name(r.id))].get<double>());
      worst = std::max(worst, d);
      ++compared;
      if (d > kOracleTol) o.fail(name + " " + std::string(measurement_name(r.id)) + " off by " + fmt(d));
    }
  }
  if (o.ok) o.detail = std::to_string(compared) + " values on " + std::to_string(testsupport::fixture_cases().size()) +
                       " fixtures; max err " + fmt(worst);
  return o;
}

// 6 -------------------------------------------------------------------------
Outcome classification() {
  Outcome o;
  const Thresholds t = default_thresholds();
  const std::array<SagittalClass, 3> want = {SagittalClass::ClassIII, SagittalClass::ClassI, SagittalClass::ClassII};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto rs = testsupport::results_from_row(testsupport::reference_rows()[i]);
    const auto c = classify(rs, t);
    if (c.sagittal != want[i]) o.fail("row " + std::to_string(i + 1) + " misclassified");
    const auto a = analyze(testsupport::load_fixture("synthetic_case_0" + std::to_string(i + 1)).landmarks,
                           default_norms(), t);
    if (a.classification.sagittal != want[i]) o.fail("fixture " + std::to_string(i + 1) + " misclassified");
  }
  if (classify_sagittal(0.0, t) != SagittalClass::ClassI) o.fail("ANB 0 not CLASS_I");
  if (classify_sagittal(4.0, t) != SagittalClass::ClassI) o.fail("ANB 4 not CLASS_I");
  if (o.ok) o.detail = "III / I / II; boundaries 0 and 4 are CLASS_I";
  return o;
}

// 7 -------------------------------------------------------------------------
Outcome ingest_and_batch() {
  Outcome o;
  for (const auto& name : testsupport::fixture_cases()) {
    const auto bytes = testsupport::slurp(testsupport::fixture(name + ".json"));
    const auto c = parse_landmarks_json(bytes);
    const auto again = parse_landmarks_json(write_landmarks_json(c));
    if (!(again == c)) o.fail(name + ": parse/write/parse changed the value");
    if (write_landmarks_json(c) != bytes) o.fail(name + ": not canonical");
  }
  const auto isbi = testsupport::slurp(testsupport::fixture("synthetic_case_01.isbi19.txt"));
  const auto ic = parse_landmarks_ordered_txt(isbi, isbi19_profile());
  if (!(parse_landmarks_json(write_landmarks_json(ic)).landmarks == ic.landmarks)) o.fail("isbi19 round trip");

  const auto in = scratch("in");
  for (const auto& name : testsupport::fixture_cases()) fs::copy_file(testsupport::fixture(name + ".json"), in / (name + ".json"));
  const std::vector<std::pair<std::string, std::string>> broken = {
      {"truncated.json", "{\"landmarks\": {\"S\": [1,"},
      {"dup.csv", "landmark,x,y\nS,1,2\nS,3,4\n"},
      {"short.txt", "1,2\n3,4\n"},
      {"unknown.json", R"({"calibration_mm_per_px": 0.1, "landmarks": {"Q": [1, 2]}})"},
  };
  for (const auto& [f, body] : broken) {
    std::ofstream(in / f, std::ios::binary) << body;
  }
  const AnalysisConfig cfg;
  BatchOptions a;
  a.out_dir = scratch("out_a");
  BatchOptions b = a;
  b.out_dir = scratch("out_b");
  const auto sa = batch_process(in, a, cfg);
  const auto sb = batch_process(in, b, cfg);
  const std::size_t outputs = sa.analyzed;
  if (sa.inputs != outputs + sa.quarantined.size()) o.fail("inputs != outputs + quarantined");
  if (sa.inputs != testsupport::fixture_cases().size() + broken.size()) o.fail("input count " + std::to_string(sa.inputs));
  if (sa.quarantined.size() != broken.size()) o.fail("quarantined " + std::to_string(sa.quarantined.size()));
  if (read_tree(a.out_dir) != read_tree(b.out_dir)) o.fail("batch rerun not byte-identical");
  const auto before = read_tree(a.out_dir);
  batch_process(in, a, cfg);
  if (read_tree(a.out_dir) != before) o.fail("rerun in place changed bytes");
  if (o.ok) {
    o.detail = std::to_string(sa.inputs) + " inputs = " + std::to_string(outputs) + " analyzed + " +
               std::to_string(sa.quarantined.size()) + " quarantined; reruns byte-identical";
  }
  for (const auto& p : {in, a.out_dir, b.out_dir}) fs::remove_all(p);
  return o;
}

// 8 -------------------------------------------------------------------------
Outcome api_equivalence() {
  Outcome o;
  ApiService api(AnalysisConfig{}, CompletionBackendConfig{}, ServiceConfig{});
  LiveServer live(api);
  httplib::Client cli("127.0.0.1", live.port);
  const AnalysisConfig cfg;
  std::size_t values = 0;
  for (const auto& name : testsupport::fixture_cases()) {
    const auto body = testsupport::slurp(testsupport::fixture(name + ".json"));
    auto res = cli.Post("/api/v1/analyses", body, "application/json");
    if (!res || res->status != 201) {
      o.fail(name + ": POST failed");
      continue;
    }
    const auto j = json::parse(res->body);
    const auto direct = run_case(parse_landmarks_json(body), cfg);
    const auto& rs = direct.analysis.batch.results;
    if (j["measurements"].size() != rs.size()) o.fail(name + ": measurement count");
    for (std::size_t i = 0; i < rs.size() && i < j["measurements"].size(); ++i, ++values) {
      if (j["measurements"][i]["value"].get<double>() != rs[i].value) o.fail(name + ": value not bit-identical");
    }
    const auto& ds = direct.analysis.deviations;
    for (std::size_t i = 0; i < ds.size() && i < j["deviations"].size(); ++i, ++values) {
      if (j["deviations"][i]["z"].get<double>() != ds[i].z) o.fail(name + ": z not bit-identical");
    }
  }

  std::mt19937_64 rng(1018);
  const auto seed = testsupport::slurp(testsupport::fixture("synthetic_case_01.json"));
  int errors = 0, non_envelopes = 0;
  for (int i = 0; errors < kFuzzCases && i < 20 * kFuzzCases; ++i) {
    std::string body = seed;
    const int rounds = 1 + static_cast<int>(rng() % 4);
    for (int k = 0; k < rounds && !body.empty(); ++k) {
      const std::size_t pos = rng() % body.size();
      switch (rng() % 5) {
        case 0: body.erase(pos, 1 + rng() % 6); break;
        case 1: body.insert(pos, 1, static_cast<char>(rng() % 256)); break;
        case 2: body[pos] = "{}[]:,\"-e.x\\"[rng() % 12]; break;
        case 3: body.resize(pos); break;
        default: body.insert(pos, "\"S\": [0, 0], "); break;
      }
    }
    auto res = cli.Post("/api/v1/analyses", body, "application/json");
    if (!res) {
      ++non_envelopes;
      continue;
    }
    if (res->status < 400) continue;
    ++errors;
    try {
      const auto e = json::parse(res->body);
      if (!e["code"].is_string() || !e["message"].is_string()) ++non_envelopes;
    } catch (...) {
      ++non_envelopes;
    }
  }
  if (errors < kFuzzCases) o.fail("only " + std::to_string(errors) + " error cases generated");
  if (non_envelopes) o.fail(std::to_string(non_envelopes) + " error responses without an envelope");
  if (o.ok) o.detail = std::to_string(values) + " numerics bit-identical over HTTP; " + std::to_string(errors) +
                       " malformed bodies all enveloped";
  return o;
}

// 9 -------------------------------------------------------------------------
Outcome dialogue_contract() {
  Outcome o;
  const std::string token = "sk-acceptance-SECRET-5d1e";
  std::string captured;  // every log line, response body and serialized session

  {
    ApiService api(AnalysisConfig{}, CompletionBackendConfig{}, ServiceConfig{});
    api.dialogue().set_log_sink([&](std::string_view l) { captured += l; });
    const auto id = json::parse(api.create_analysis(testsupport::slurp(testsupport::fixture("synthetic_case_03.json"))).body)["analysis_id"].get<std::string>();
    const auto record = api.analyses().get(id);
    const auto sid = json::parse(api.create_session(json{{"analysis_id", id}}.dump()).body)["session_id"].get<std::string>();
    const auto reply = json::parse(api.post_message(sid, R"({"content": "what is the ANB angle?"})").body)["reply"].get<std::string>();
    const auto grounded = format_number(find(record->data().analysis.batch.results, M::ANB)->value);
    if (reply.find("ANB") == std::string::npos || reply.find(grounded) == std::string::npos) o.fail("offline reply: " + reply);
    if (reply.find("Class II") == std::string::npos) o.fail("offline reply lacks class: " + reply);
    const auto plain = json::parse(api.post_message(sid, R"({"content": "thanks"})").body)["reply"].get<std::string>();
    if (plain != record->report(Language::En).summary) o.fail("no-keyword reply is not the summary");
  }

  testsupport::StubBackend stub("Canned completion from the recorded backend.");
  CompletionBackendConfig bc;
  bc.enabled = true;
  bc.endpoint = stub.endpoint();
  bc.model = "stub";
  bc.api_key = token;
  bc.timeout_s = 5;
  const auto dir = scratch("journal");
  ServiceConfig sc;
  sc.journal_path = (dir / "sessions.jsonl").string();
  sc.persist_dir = (dir / "persist").string();
  ApiService api(AnalysisConfig{}, bc, sc);
  api.dialogue().set_log_sink([&](std::string_view l) { captured += l; });
  LiveServer live(api);
  httplib::Client cli("127.0.0.1", live.port);
  auto created = cli.Post("/api/v1/analyses", testsupport::slurp(testsupport::fixture("synthetic_case_01.json")), "application/json");
  captured += created->body;
  const auto id = json::parse(created->body)["analysis_id"].get<std::string>();
  auto sess = cli.Post("/api/v1/sessions", json{{"analysis_id", id}}.dump(), "application/json");
  captured += sess->body;
  const auto sid = json::parse(sess->body)["session_id"].get<std::string>();
  auto msg = cli.Post("/api/v1/sessions/" + sid + "/messages", R"({"content": "diagnosis?"})", "application/json");
  captured += msg->body;
  if (json::parse(msg->body)["reply"] != "Canned completion from the recorded backend.") o.fail("stub reply altered");
  if (stub.auth_headers().empty() || stub.auth_headers()[0] != "Bearer " + token) o.fail("token not sent to backend");
  captured += cli.Get("/api/v1/sessions/" + sid)->body;
  captured += cli.Get("/healthz")->body;
  captured += session_to_json(api.dialogue().get(sid)).dump();
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) captured += testsupport::slurp(e.path());
  }

  // Failure path logs too.
  CompletionBackendConfig dead = bc;
  dead.endpoint = testsupport::dead_endpoint();
  dead.timeout_s = 2;
  ApiService api2(AnalysisConfig{}, dead, ServiceConfig{});
  api2.dialogue().set_log_sink([&](std::string_view l) { captured += l; });
  const auto id2 = json::parse(api2.create_analysis(testsupport::slurp(testsupport::fixture("synthetic_case_02.json"))).body)["analysis_id"].get<std::string>();
  const auto sid2 = json::parse(api2.create_session(json{{"analysis_id", id2}}.dump()).body)["session_id"].get<std::string>();
  captured += api2.post_message(sid2, R"({"content": "SNB?"})").body;

  if (captured.find(token) != std::string::npos) o.fail("auth token found in logs or serialized output");
  if (o.ok) o.detail = "offline grounded, stub verbatim, token absent from " + std::to_string(captured.size()) + " bytes scanned";
  fs::remove_all(dir);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"reference-row ANB arithmetic", row_arithmetic},
      {"reference-row suffix formatting", row_formatting},
      {"prompt grammar and determinism", prompt_grammar},
      {"geometry property suite", geometry_properties},
      {"oracle equivalence on fixtures", oracle_equivalence},
      {"sagittal classification", classification},
      {"ingest round trip and batch determinism", ingest_and_batch},
      {"API/library equivalence and error envelopes", api_equivalence},
      {"dialogue offline contract", dialogue_contract},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    std::printf("%s  %-45s %s\n", o.ok ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += o.ok ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed;
}
