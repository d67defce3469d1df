#pragma once

#include "cephkit/pipeline.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>

namespace cephkit {

// 128-bit random hex token.
std::string make_token();
std::int64_t now_ms();

// One immutable analysis. Rendered reports are cached per (language, format).
class AnalysisRecord {
 public:
  AnalysisRecord(std::string id, CaseAnalysis data, std::shared_ptr<const AnalysisConfig> config,
                 std::int64_t created_at_ms);

  const std::string& id() const noexcept { return id_; }
  const CaseAnalysis& data() const noexcept { return data_; }
  const AnalysisConfig& config() const noexcept { return *config_; }
  std::int64_t created_at_ms() const noexcept { return created_at_ms_; }

  const DiagnosticReport& report(Language lang) const;
  const std::string& rendered(Language lang, ReportFormat format) const;

  nlohmann::ordered_json to_json() const;

 private:
  std::string id_;
  CaseAnalysis data_;
  std::shared_ptr<const AnalysisConfig> config_;
  std::int64_t created_at_ms_;

  mutable std::mutex cache_mutex_;
  mutable std::map<Language, DiagnosticReport> reports_;
  mutable std::map<std::pair<Language, ReportFormat>, std::string> rendered_;
};

// Read-mostly store; inserts are atomic and ids are never reused.
class AnalysisStore {
 public:
  std::shared_ptr<const AnalysisRecord> insert(CaseAnalysis data, std::shared_ptr<const AnalysisConfig> config);
  std::shared_ptr<const AnalysisRecord> get(const std::string& id) const;
  std::size_t size() const;

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const AnalysisRecord>> records_;
};

}  // namespace cephkit
