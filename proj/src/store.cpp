#include "cephkit/store.hpp"

#include <chrono>
#include <cstdio>
#include <random>

namespace cephkit {

std::string make_token() {
  static std::mutex m;
  static std::mt19937_64 rng{[] {
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd()};
    return std::mt19937_64(seq);
  }()};
  std::lock_guard lock(m);
  char buf[33];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng()));
  return buf;
}

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

AnalysisRecord::AnalysisRecord(std::string id, CaseAnalysis data, std::shared_ptr<const AnalysisConfig> config,
                               std::int64_t created_at_ms)
    : id_(std::move(id)), data_(std::move(data)), config_(std::move(config)), created_at_ms_(created_at_ms) {}

const DiagnosticReport& AnalysisRecord::report(Language lang) const {
  std::lock_guard lock(cache_mutex_);
  auto it = reports_.find(lang);
  if (it == reports_.end()) it = reports_.emplace(lang, make_report(data_, lang, *config_)).first;
  return it->second;
}

const std::string& AnalysisRecord::rendered(Language lang, ReportFormat format) const {
  const DiagnosticReport& r = report(lang);
  std::lock_guard lock(cache_mutex_);
  auto key = std::make_pair(lang, format);
  auto it = rendered_.find(key);
  if (it == rendered_.end()) it = rendered_.emplace(key, render_report(r, format)).first;
  return it->second;
}

nlohmann::ordered_json AnalysisRecord::to_json() const {
  nlohmann::ordered_json j;
  j["analysis_id"] = id_;
  j["created_at_ms"] = created_at_ms_;
  j["case"] = nlohmann::ordered_json::parse(write_landmarks_json(data_.input));
  const auto body = analysis_to_json(data_, *config_);
  for (const auto& [k, v] : body.items()) j[k] = v;
  return j;
}

std::shared_ptr<const AnalysisRecord> AnalysisStore::insert(CaseAnalysis data,
                                                            std::shared_ptr<const AnalysisConfig> config) {
  const auto created = now_ms();
  std::unique_lock lock(mutex_);
  std::string id;
  do {
    id = make_token();
  } while (records_.contains(id));
  auto rec = std::make_shared<const AnalysisRecord>(id, std::move(data), std::move(config), created);
  records_.emplace(id, rec);
  return rec;
}

std::shared_ptr<const AnalysisRecord> AnalysisStore::get(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = records_.find(id);
  return it == records_.end() ? nullptr : it->second;
}

std::size_t AnalysisStore::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

}  // namespace cephkit
