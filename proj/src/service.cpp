#include "cephkit/service.hpp"

#include "text_util.hpp"

#include <httplib.h>

#include <charconv>
#include <filesystem>
#include <random>

#ifndef CEPHKIT_VERSION
#define CEPHKIT_VERSION "0.0.0"
#endif

namespace cephkit {
namespace {

using json = nlohmann::json;

HttpResponse json_response(int status, const nlohmann::ordered_json& body) {
  return {status, "application/json", body.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n"};
}

json location_details(const Error& e) {
  json d = json::object();
  if (e.line) d["line"] = *e.line;
  if (e.column) d["column"] = *e.column;
  if (e.field) d["field"] = *e.field;
  return d.empty() ? json(nullptr) : d;
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingCalibration:
    case ErrorCode::MissingMeasurement:
    case ErrorCode::MissingTemplate:
    case ErrorCode::EmptyInstructionSet: return 422;
    case ErrorCode::UnknownAnalysis:
    case ErrorCode::UnknownSession: return 404;
    case ErrorCode::BackendUnreachable: return 502;
    case ErrorCode::Io: return 500;
    default: return 400;
  }
}

HttpResponse from_error(const Error& e) {
  return error_response(status_for(e.code()), to_string(e.code()), e.what(), location_details(e));
}

std::string param(const std::map<std::string, std::string>& params, const std::string& key, std::string fallback) {
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

// Parses a JSON object body; throws Error(ParseError) with location.
json parse_object(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    Error err(ErrorCode::ParseError, std::string("malformed JSON: ") + e.what());
    err.column = e.byte;
    throw err;
  } catch (const json::out_of_range& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "body must be a JSON object");
  return j;
}

std::string string_field(const json& j, const char* key, bool required) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (!required) return {};
    Error e(ErrorCode::ParseError, std::string("missing field ") + key);
    e.field = key;
    throw e;
  }
  if (!it->is_string()) {
    Error e(ErrorCode::ParseError, std::string(key) + " must be a string");
    e.field = key;
    throw e;
  }
  return it->get<std::string>();
}

Language language_param(const std::string& code) {
  auto lang = parse_language(code);
  if (!lang) throw Error(ErrorCode::BadRequest, "lang must be en or zh");
  return *lang;
}

std::uint64_t random_seed() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(m);
  return rng();
}

std::map<std::string, std::string> to_map(const httplib::Params& params) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : params) out.emplace(k, v);
  return out;
}

void apply(const HttpResponse& r, httplib::Response& res) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

std::string_view version() noexcept { return CEPHKIT_VERSION; }

std::pair<std::string, int> parse_bind_addr(std::string_view addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string_view::npos || colon == 0) throw Error(ErrorCode::BadRequest, "address must be HOST:PORT");
  std::string host(addr.substr(0, colon));
  if (host.size() > 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  const auto port_text = addr.substr(colon + 1);
  int port = -1;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (port_text.empty() || ec != std::errc() || ptr != port_text.data() + port_text.size() || port < 1 || port > 65535) {
    throw Error(ErrorCode::BadRequest, "port must be an integer in [1, 65535]");
  }
  return {host, port};
}

HttpResponse error_response(int status, std::string_view code, std::string_view message, const json& details) {
  nlohmann::ordered_json j;
  j["code"] = code;
  j["message"] = message;
  if (!details.is_null()) j["details"] = details;
  return {status, "application/json", j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n"};
}

ApiService::ApiService(AnalysisConfig analysis_config, CompletionBackendConfig backend, ServiceConfig service,
                       std::unique_ptr<CompletionClient> client)
    : analysis_config_(std::make_shared<const AnalysisConfig>(std::move(analysis_config))),
      service_(std::move(service)) {
  dialogue_ = std::make_unique<DialogueGateway>(store_, std::move(backend), std::move(client), service_.journal_path);
}

HttpResponse ApiService::create_analysis(std::string_view body) {
  try {
    auto result = run_case(parse_landmarks_json(body), *analysis_config_);
    auto record = store_.insert(std::move(result), analysis_config_);
    const auto j = record->to_json();
    if (!service_.persist_dir.empty()) {
      std::filesystem::create_directories(service_.persist_dir);
      const auto base = std::filesystem::path(service_.persist_dir) / record->id();
      write_file(base.string() + ".analysis.json", j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n");
      write_file(base.string() + ".report.en.md", record->rendered(Language::En, ReportFormat::Markdown));
    }
    return json_response(201, j);
  } catch (const Error& e) {
    return from_error(e);
  }
}

HttpResponse ApiService::get_analysis(const std::string& id) const {
  auto record = store_.get(id);
  if (!record) return error_response(404, "UNKNOWN_ANALYSIS", "unknown analysis " + id);
  return json_response(200, record->to_json());
}

HttpResponse ApiService::get_report(const std::string& id, const std::map<std::string, std::string>& params) const {
  auto record = store_.get(id);
  if (!record) return error_response(404, "UNKNOWN_ANALYSIS", "unknown analysis " + id);
  try {
    const auto lang = language_param(param(params, "lang", "en"));
    const auto format = parse_report_format(param(params, "format", "text"));
    if (!format) return error_response(400, "BAD_REQUEST", "format must be text, markdown or structured");
    const auto& body = record->rendered(lang, *format);
    switch (*format) {
      case ReportFormat::Text: return {200, "text/plain; charset=utf-8", body};
      case ReportFormat::Markdown: return {200, "text/markdown; charset=utf-8", body};
      case ReportFormat::Structured: return {200, "application/json", body};
    }
    return {200, "text/plain; charset=utf-8", body};
  } catch (const Error& e) {
    return from_error(e);
  }
}

HttpResponse ApiService::get_prompt(const std::string& id, const std::map<std::string, std::string>& params) const {
  auto record = store_.get(id);
  if (!record) return error_response(404, "UNKNOWN_ANALYSIS", "unknown analysis " + id);
  try {
    const auto lang = language_param(param(params, "lang", "en"));
    std::uint64_t seed = 0;
    if (auto it = params.find("seed"); it != params.end()) {
      const auto& s = it->second;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
      if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        return error_response(400, "BAD_REQUEST", "seed must be an unsigned 64-bit integer");
      }
    } else {
      seed = random_seed();
    }
    const auto token = param(params, "image_token", std::string(kDefaultImageToken));
    const auto sample =
        build_prompt(record->data().analysis.batch.results, lang, seed, record->config().resources.instructions, token);
    nlohmann::ordered_json j;
    j["analysis_id"] = id;
    j["language"] = language_code(sample.language);
    j["seed"] = sample.seed;
    j["instruction_index"] = sample.instruction_index;
    j["image_token"] = token;
    j["text"] = sample.text;
    return json_response(200, j);
  } catch (const Error& e) {
    return from_error(e);
  }
}

HttpResponse ApiService::create_session(std::string_view body) {
  try {
    const auto j = parse_object(body);
    const auto analysis_id = string_field(j, "analysis_id", true);
    auto lang_code = string_field(j, "lang", false);
    const auto lang = language_param(lang_code.empty() ? "en" : lang_code);
    const auto s = dialogue_->open_session(analysis_id, lang);
    nlohmann::ordered_json out;
    out["session_id"] = s.id;
    out["analysis_id"] = s.analysis_id;
    out["language"] = language_code(s.language);
    return json_response(201, out);
  } catch (const Error& e) {
    return from_error(e);
  }
}

HttpResponse ApiService::post_message(const std::string& session_id, std::string_view body) {
  try {
    // Unknown session wins over body validation.
    (void)dialogue_->get(session_id);
    const auto j = parse_object(body);
    const auto content = string_field(j, "content", true);
    const auto reply = dialogue_->ask(session_id, content);
    nlohmann::ordered_json out;
    out["session_id"] = session_id;
    out["reply"] = reply.content;
    out["role"] = role_name(reply.role);
    return json_response(200, out);
  } catch (const Error& e) {
    return from_error(e);
  }
}

HttpResponse ApiService::get_session(const std::string& session_id) const {
  try {
    return json_response(200, session_to_json(dialogue_->get(session_id)));
  } catch (const Error& e) {
    return from_error(e);
  }
}

HttpResponse ApiService::healthz() const {
  nlohmann::ordered_json j;
  j["status"] = "ok";
  j["version"] = version();
  j["backend_enabled"] = dialogue_->backend_enabled();
  return json_response(200, j);
}

bool ApiService::authorized(const std::map<std::string, std::string>& headers) const {
  if (service_.api_key.empty()) return true;
  if (auto it = headers.find("X-API-Key"); it != headers.end() && it->second == service_.api_key) return true;
  if (auto it = headers.find("Authorization"); it != headers.end() && it->second == "Bearer " + service_.api_key) {
    return true;
  }
  return false;
}

void ApiService::mount(httplib::Server& svr) {
  svr.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (req.method == "OPTIONS" || req.path == "/healthz") return httplib::Server::HandlerResponse::Unhandled;
    std::map<std::string, std::string> headers;
    for (const char* h : {"X-API-Key", "Authorization"}) {
      if (req.has_header(h)) headers.emplace(h, req.get_header_value(h));
    }
    if (authorized(headers)) return httplib::Server::HandlerResponse::Unhandled;
    apply(error_response(401, "UNAUTHORIZED", "missing or invalid API key"), res);
    return httplib::Server::HandlerResponse::Handled;
  });

  svr.set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    const auto origin = req.get_header_value("Origin");
    if (origin.empty()) return;
    for (const auto& allowed : service_.cors_origins) {
      if (allowed == origin || allowed == "*") {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Vary", "Origin");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type, Authorization, X-API-Key");
        return;
      }
    }
  });

  svr.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  svr.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) { apply(healthz(), res); });
  svr.Post("/api/v1/analyses", [this](const httplib::Request& req, httplib::Response& res) {
    apply(create_analysis(req.body), res);
  });
  svr.Get(R"(/api/v1/analyses/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    apply(get_analysis(req.matches[1]), res);
  });
  svr.Get(R"(/api/v1/analyses/([^/]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
    apply(get_report(req.matches[1], to_map(req.params)), res);
  });
  svr.Get(R"(/api/v1/analyses/([^/]+)/prompt)", [this](const httplib::Request& req, httplib::Response& res) {
    apply(get_prompt(req.matches[1], to_map(req.params)), res);
  });
  svr.Post("/api/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    apply(create_session(req.body), res);
  });
  svr.Post(R"(/api/v1/sessions/([^/]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
    apply(post_message(req.matches[1], req.body), res);
  });
  svr.Get(R"(/api/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    apply(get_session(req.matches[1]), res);
  });

  // Every non-2xx response carries an error envelope, including unmatched
  // routes and handler exceptions.
  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const auto code = res.status == 404 ? "NOT_FOUND" : res.status == 405 ? "METHOD_NOT_ALLOWED" : "HTTP_ERROR";
    apply(error_response(res.status, code, httplib::status_message(res.status)), res);
  });
  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    apply(error_response(500, "INTERNAL", msg), res);
  });
}

bool run_server(ApiService& api, const std::string& host, int port) {
  httplib::Server svr;
  api.mount(svr);
  return svr.listen(host, port);
}

}  // namespace cephkit
