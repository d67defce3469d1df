#pragma once

#include "cephkit/store.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cephkit {

enum class Role { System, User, Assistant };

std::string_view role_name(Role r) noexcept;

struct ChatMessage {
  Role role;
  std::string content;
  std::int64_t timestamp_ms = 0;
};

enum class FallbackPolicy { Rule, Error };

struct CompletionBackendConfig {
  bool enabled = false;
  std::string endpoint;  // full URL, e.g. http://host:port/v1/chat/completions
  std::string model;
  std::string api_key;   // never logged or serialized
  double timeout_s = 30.0;
  FallbackPolicy fallback = FallbackPolicy::Rule;

  // CEPH_LLM_ENDPOINT, CEPH_LLM_MODEL, CEPH_LLM_API_KEY, CEPH_LLM_TIMEOUT_S,
  // CEPH_LLM_FALLBACK. Enabled iff endpoint and model are both set.
  static CompletionBackendConfig from_env();
  // Same keys, resolved through an arbitrary lookup (empty = unset).
  static CompletionBackendConfig from_lookup(const std::function<std::string(std::string_view)>& get);
};

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  // Returns the assistant content. Throws Error(BackendUnreachable).
  virtual std::string complete(const std::string& model, std::span<const ChatMessage> messages) = 0;
};

// Chat-completion endpoint over HTTP(S): {"model", "messages"} in,
// choices[0].message.content out, bearer auth.
class HttpCompletionClient : public CompletionClient {
 public:
  explicit HttpCompletionClient(CompletionBackendConfig config);
  std::string complete(const std::string& model, std::span<const ChatMessage> messages) override;

 private:
  CompletionBackendConfig config_;
  std::string scheme_host_port_;
  std::string path_;
};

// Keyword lookup from question text to measurements.
class RuleResponder {
 public:
  // keyword<TAB>MEASUREMENT_ID records.
  explicit RuleResponder(std::string_view synonyms);
  static const RuleResponder& shipped();

  // Matched measurements in declaration order, deduplicated.
  std::vector<MeasurementId> match(std::string_view question) const;
  std::string answer(const AnalysisRecord& record, Language lang, std::string_view question) const;

 private:
  std::vector<std::pair<std::string, MeasurementId>> synonyms_;
};

struct Session {
  std::string id;
  std::string analysis_id;
  Language language = Language::En;
  std::int64_t created_at_ms = 0;
  std::vector<ChatMessage> history;
};

nlohmann::ordered_json session_to_json(const Session& s);

// Deterministic grounding text: the rendered report plus the raw
// measurement list.
std::string grounding_text(const AnalysisRecord& record, Language lang);

using LogSink = std::function<void(std::string_view)>;

class DialogueGateway {
 public:
  // client may be null; one is created from config when the backend is
  // enabled.
  DialogueGateway(const AnalysisStore& store, CompletionBackendConfig config,
                  std::unique_ptr<CompletionClient> client = nullptr, std::string journal_path = {});
  ~DialogueGateway();

  // Throws Error(UnknownAnalysis).
  Session open_session(const std::string& analysis_id, Language lang);
  // Throws Error(UnknownSession), Error(EmptyMessage), and
  // Error(BackendUnreachable) only under the error fallback policy.
  ChatMessage ask(const std::string& session_id, std::string_view text);
  // Throws Error(UnknownSession).
  Session get(const std::string& session_id) const;

  bool backend_enabled() const noexcept { return config_.enabled; }
  void set_log_sink(LogSink sink);

 private:
  struct Slot;

  std::shared_ptr<Slot> slot(const std::string& id) const;
  void log(std::string_view line) const;
  void journal(const Session& s, const ChatMessage& m);

  const AnalysisStore& store_;
  CompletionBackendConfig config_;
  std::unique_ptr<CompletionClient> client_;
  std::string journal_path_;

  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  mutable std::mutex log_mutex_;
  LogSink log_sink_;
  std::mutex journal_mutex_;
};

struct TrainingPair {
  std::string prompt;
  std::string response;
};

// Prompt i uses seed + i; responses are the rendered text reports.
std::vector<TrainingPair> export_training_pairs(std::span<const CaseAnalysis> analyses, std::uint64_t seed,
                                                Language lang, const AnalysisConfig& config);

// One line per pair: escaped prompt, TAB, escaped response. Backslash, tab,
// CR and LF are escaped as \\ \t \r \n.
std::string write_training_pairs(std::span<const TrainingPair> pairs);
std::string escape_field(std::string_view s);

}  // namespace cephkit
