#include "cephkit/dialogue.hpp"

#include "embedded_data.hpp"
#include "text_util.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>

namespace cephkit {
namespace {

using json = nlohmann::json;

std::string env_or(const char* name, std::string fallback = {}) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : fallback;
}

bool is_ascii(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 0x80; });
}

char ascii_lower(char c) { return c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c; }

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

// Case-insensitive match bounded by non-alphanumerics on both sides.
bool contains_word(std::string_view haystack, std::string_view needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool eq = true;
    for (std::size_t k = 0; k < needle.size() && eq; ++k) eq = ascii_lower(haystack[i + k]) == ascii_lower(needle[k]);
    if (!eq) continue;
    const bool left_ok = i == 0 || !is_word_char(haystack[i - 1]);
    const std::size_t end = i + needle.size();
    const bool right_ok = end == haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
  }
  return false;
}

const Finding* finding_for(const std::vector<Finding>& findings, MeasurementId id) {
  for (const auto& f : findings) {
    if (std::find(f.sources.begin(), f.sources.end(), id) != f.sources.end()) return &f;
  }
  return nullptr;
}

}  // namespace

std::string_view role_name(Role r) noexcept {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

CompletionBackendConfig CompletionBackendConfig::from_lookup(const std::function<std::string(std::string_view)>& get) {
  CompletionBackendConfig c;
  c.endpoint = get("CEPH_LLM_ENDPOINT");
  c.model = get("CEPH_LLM_MODEL");
  c.api_key = get("CEPH_LLM_API_KEY");
  if (auto t = get("CEPH_LLM_TIMEOUT_S"); !t.empty()) {
    try {
      c.timeout_s = std::stod(t);
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadRequest, "CEPH_LLM_TIMEOUT_S must be a number");
    }
    if (!(c.timeout_s > 0)) throw Error(ErrorCode::BadRequest, "CEPH_LLM_TIMEOUT_S must be positive");
  }
  auto fb = get("CEPH_LLM_FALLBACK");
  if (fb.empty()) fb = "rule";
  if (fb == "rule") {
    c.fallback = FallbackPolicy::Rule;
  } else if (fb == "error") {
    c.fallback = FallbackPolicy::Error;
  } else {
    throw Error(ErrorCode::BadRequest, "CEPH_LLM_FALLBACK must be rule or error");
  }
  c.enabled = !c.endpoint.empty() && !c.model.empty();
  return c;
}

CompletionBackendConfig CompletionBackendConfig::from_env() {
  return from_lookup([](std::string_view name) { return env_or(std::string(name).c_str()); });
}

HttpCompletionClient::HttpCompletionClient(CompletionBackendConfig config) : config_(std::move(config)) {
  const auto& url = config_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::BadRequest, "completion endpoint must be an http(s) URL");
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string HttpCompletionClient::complete(const std::string& model, std::span<const ChatMessage> messages) {
  json body;
  body["model"] = model;
  body["messages"] = json::array();
  for (const auto& m : messages) body["messages"].push_back({{"role", role_name(m.role)}, {"content", m.content}});

  httplib::Client cli(scheme_host_port_);
  const auto secs = static_cast<time_t>(config_.timeout_s);
  const auto usecs = static_cast<time_t>((config_.timeout_s - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto res = cli.Post(path_, headers, body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace), "application/json");
  if (!res) throw Error(ErrorCode::BackendUnreachable, "completion request failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorCode::BackendUnreachable, "completion endpoint returned HTTP " + std::to_string(res->status));
  }
  const auto reply = json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw Error(ErrorCode::BackendUnreachable, "completion reply is not JSON");
  try {
    const auto& content = reply.at("choices").at(0).at("message").at("content");
    if (!content.is_string() || content.get<std::string>().empty()) throw std::runtime_error("empty");
    return content.get<std::string>();
  } catch (const std::exception&) {
    throw Error(ErrorCode::BackendUnreachable, "completion reply lacks choices[0].message.content");
  }
}

RuleResponder::RuleResponder(std::string_view synonyms) {
  for_each_record(synonyms, [&](std::size_t line_no, std::string_view key, std::string_view value) {
    const auto id = measurement_from_name(trim(value));
    if (!id) {
      throw Error(ErrorCode::ParseError, "synonyms line " + std::to_string(line_no) + ": unknown measurement");
    }
    synonyms_.emplace_back(std::string(trim(key)), *id);
  });
}

const RuleResponder& RuleResponder::shipped() {
  static const RuleResponder r(embedded::synonyms());
  return r;
}

std::vector<MeasurementId> RuleResponder::match(std::string_view question) const {
  std::vector<MeasurementId> out;
  for (const auto& [keyword, id] : synonyms_) {
    const bool hit = is_ascii(keyword) ? contains_word(question, keyword) : question.find(keyword) != std::string_view::npos;
    if (hit && std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string RuleResponder::answer(const AnalysisRecord& record, Language lang, std::string_view question) const {
  const auto& report = record.report(lang);
  const auto ids = match(question);
  if (ids.empty()) return report.summary;

  const auto& templates = record.config().resources.templates(lang);
  const auto& data = record.data();
  const std::string sep = lang == Language::Zh ? "" : " ";
  std::string out;
  for (auto id : ids) {
    if (!out.empty()) out += sep;
    const auto& label = templates.get("label." + std::string(measurement_name(id)));
    const auto* r = find(data.analysis.batch.results, id);
    if (!r) {
      out += label + (lang == Language::Zh ? "：本病例无法测量。" : ": not measurable for this case.");
      continue;
    }
    out += label + ": " + format_number(r->value) + " " + templates.get("unit." + std::string(unit_name(r->unit)));
    if (const auto* d = find(data.analysis.deviations, id)) {
      out += " (" + templates.get("grade." + std::string(grade_name(d->grade))) + ")";
    }
    out += lang == Language::Zh ? "。" : ".";
    if (const auto* f = finding_for(data.findings, id)) {
      out += sep + templates.get("finding." + std::string(category_name(f->category)) + "." + f->level);
    }
  }
  return out;
}

nlohmann::ordered_json session_to_json(const Session& s) {
  nlohmann::ordered_json j;
  j["session_id"] = s.id;
  j["analysis_id"] = s.analysis_id;
  j["language"] = language_code(s.language);
  j["created_at_ms"] = s.created_at_ms;
  j["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : s.history) {
    j["messages"].push_back({{"role", role_name(m.role)}, {"content", m.content}, {"timestamp_ms", m.timestamp_ms}});
  }
  return j;
}

std::string grounding_text(const AnalysisRecord& record, Language lang) {
  std::string out = lang == Language::Zh
                        ? "你是一名口腔正畸助手。请依据以下头影测量分析回答问题。\n\n"
                        : "You are an orthodontic assistant. Answer questions using the cephalometric analysis below.\n\n";
  out += record.rendered(lang, ReportFormat::Text);
  out += "\nRaw measurements:\n";
  for (const auto& r : record.data().analysis.batch.results) {
    out += std::string(measurement_name(r.id)) + " = " + format_number(r.value) + " " + std::string(unit_name(r.unit)) +
           "\n";
  }
  return out;
}

struct DialogueGateway::Slot {
  std::mutex mutex;
  Session session;
  std::shared_ptr<const AnalysisRecord> record;
};

DialogueGateway::DialogueGateway(const AnalysisStore& store, CompletionBackendConfig config,
                                 std::unique_ptr<CompletionClient> client, std::string journal_path)
    : store_(store), config_(std::move(config)), client_(std::move(client)), journal_path_(std::move(journal_path)) {
  if (config_.enabled && (config_.endpoint.empty() || config_.model.empty())) {
    throw Error(ErrorCode::BadRequest, "enabled completion backend needs endpoint and model");
  }
  if (config_.enabled && !client_) client_ = std::make_unique<HttpCompletionClient>(config_);
  log_sink_ = [](std::string_view line) { std::clog << "[cephkit] " << line << "\n"; };
}

DialogueGateway::~DialogueGateway() = default;

void DialogueGateway::set_log_sink(LogSink sink) {
  std::lock_guard lock(log_mutex_);
  log_sink_ = std::move(sink);
}

void DialogueGateway::log(std::string_view line) const {
  std::lock_guard lock(log_mutex_);
  if (log_sink_) log_sink_(line);
}

void DialogueGateway::journal(const Session& s, const ChatMessage& m) {
  if (journal_path_.empty()) return;
  json j{{"session_id", s.id},
         {"analysis_id", s.analysis_id},
         {"role", role_name(m.role)},
         {"content", m.content},
         {"timestamp_ms", m.timestamp_ms}};
  std::lock_guard lock(journal_mutex_);
  std::ofstream out(journal_path_, std::ios::app | std::ios::binary);
  out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
}

std::shared_ptr<DialogueGateway::Slot> DialogueGateway::slot(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "unknown session " + id);
  return it->second;
}

Session DialogueGateway::open_session(const std::string& analysis_id, Language lang) {
  auto record = store_.get(analysis_id);
  if (!record) throw Error(ErrorCode::UnknownAnalysis, "unknown analysis " + analysis_id);

  auto s = std::make_shared<Slot>();
  s->record = record;
  s->session.analysis_id = analysis_id;
  s->session.language = lang;
  s->session.created_at_ms = now_ms();
  s->session.history.push_back({Role::System, grounding_text(*record, lang), s->session.created_at_ms});
  {
    std::unique_lock lock(sessions_mutex_);
    do {
      s->session.id = make_token();
    } while (sessions_.contains(s->session.id));
    sessions_.emplace(s->session.id, s);
  }
  journal(s->session, s->session.history.front());
  log("opened session " + s->session.id + " on analysis " + analysis_id);
  return s->session;
}

ChatMessage DialogueGateway::ask(const std::string& session_id, std::string_view text) {
  if (trim(text).empty()) throw Error(ErrorCode::EmptyMessage, "message content must not be empty");
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  auto& session = s->session;
  session.history.push_back({Role::User, std::string(text), now_ms()});

  std::string reply;
  if (config_.enabled) {
    try {
      log("session " + session.id + ": calling completion endpoint " + config_.endpoint + " (model " + config_.model +
          ")");
      reply = client_->complete(config_.model, session.history);
    } catch (const Error& e) {
      log("session " + session.id + ": completion failed: " + e.what());
      if (config_.fallback == FallbackPolicy::Error) {
        session.history.pop_back();
        throw Error(ErrorCode::BackendUnreachable, e.what());
      }
    }
  }
  if (reply.empty()) reply = RuleResponder::shipped().answer(*s->record, session.language, text);

  session.history.push_back({Role::Assistant, std::move(reply), now_ms()});
  journal(session, session.history[session.history.size() - 2]);
  journal(session, session.history.back());
  return session.history.back();
}

Session DialogueGateway::get(const std::string& session_id) const {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  return s->session;
}

std::vector<TrainingPair> export_training_pairs(std::span<const CaseAnalysis> analyses, std::uint64_t seed,
                                                Language lang, const AnalysisConfig& config) {
  std::vector<TrainingPair> out;
  out.reserve(analyses.size());
  for (std::size_t i = 0; i < analyses.size(); ++i) {
    const auto& a = analyses[i];
    auto prompt = build_prompt(a.analysis.batch.results, lang, seed + i, config.resources.instructions);
    out.push_back({std::move(prompt.text), render_report(make_report(a, lang, config), ReportFormat::Text)});
  }
  return out;
}

std::string escape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

std::string write_training_pairs(std::span<const TrainingPair> pairs) {
  std::string out;
  for (const auto& p : pairs) out += escape_field(p.prompt) + "\t" + escape_field(p.response) + "\n";
  return out;
}

}  // namespace cephkit
