#pragma once

#include "cephkit/dialogue.hpp"
#include "cephkit/store.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace httplib {
class Server;
}

namespace cephkit {

std::string_view version() noexcept;

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<std::string> cors_origins;  // exact Origin values allowed
  std::string api_key;                    // optional static key (Bearer or X-API-Key)
  std::string persist_dir;                // optional write-through of analyses
  std::string journal_path;               // optional session journal (JSON lines)
};

// "HOST:PORT" -> (host, port). Throws Error(BadRequest).
std::pair<std::string, int> parse_bind_addr(std::string_view addr);

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

// {"code", "message", "details"?}
HttpResponse error_response(int status, std::string_view code, std::string_view message,
                            const nlohmann::json& details = nullptr);

// Endpoint logic, independent of the HTTP transport so it can be driven
// directly in tests. mount() wires it onto a cpp-httplib server.
class ApiService {
 public:
  ApiService(AnalysisConfig analysis_config, CompletionBackendConfig backend, ServiceConfig service,
             std::unique_ptr<CompletionClient> client = nullptr);

  HttpResponse create_analysis(std::string_view body);
  HttpResponse get_analysis(const std::string& id) const;
  HttpResponse get_report(const std::string& id, const std::map<std::string, std::string>& params) const;
  HttpResponse get_prompt(const std::string& id, const std::map<std::string, std::string>& params) const;
  HttpResponse create_session(std::string_view body);
  HttpResponse post_message(const std::string& session_id, std::string_view body);
  HttpResponse get_session(const std::string& session_id) const;
  HttpResponse healthz() const;

  // Checks the static API key when one is configured.
  bool authorized(const std::map<std::string, std::string>& headers) const;

  void mount(httplib::Server& server);

  AnalysisStore& analyses() noexcept { return store_; }
  DialogueGateway& dialogue() noexcept { return *dialogue_; }
  const ServiceConfig& config() const noexcept { return service_; }

 private:
  std::shared_ptr<const AnalysisConfig> analysis_config_;
  ServiceConfig service_;
  AnalysisStore store_;
  std::unique_ptr<DialogueGateway> dialogue_;
};

// Blocks until the server stops. Returns false if binding fails.
bool run_server(ApiService& api, const std::string& host, int port);

}  // namespace cephkit
