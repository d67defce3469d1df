#pragma once

#include "cephkit/ingest.hpp"
#include "cephkit/report.hpp"
#include "cephkit/steiner.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace cephkit {

struct AnalysisConfig {
  NormTable norms = default_norms();
  Thresholds thresholds = default_thresholds();
  ReportResources resources = default_resources();
};

// Empty paths keep the shipped defaults. Throws Error(Io) / parse errors.
AnalysisConfig load_config(const std::string& norms_path, const std::string& thresholds_path,
                           const std::string& templates_dir);

// Validates a parsed case (image bounds, determinable orientation, no
// coincident operand landmarks, at least one computable measurement) and
// analyzes it. Throws Error with OutOfBounds, MissingLandmark or Degenerate.
Analysis analyze_case(const CaseFile& c, const AnalysisConfig& config);

struct CaseAnalysis {
  CaseFile input;
  Analysis analysis;
  std::vector<Finding> findings;
};

CaseAnalysis run_case(const CaseFile& c, const AnalysisConfig& config);

DiagnosticReport make_report(const CaseAnalysis& a, Language lang, const AnalysisConfig& config);

// measurements / skipped / deviations / classification, in a stable layout.
nlohmann::ordered_json analysis_to_json(const CaseAnalysis& a, const AnalysisConfig& config);

// ---------------------------------------------------------------------------
// Batch processing with quarantine.

struct QuarantineRecord {
  std::string path;  // file name relative to the input directory
  ErrorCode reason;
  std::string detail;
};

struct BatchOptions {
  std::filesystem::path out_dir;
  std::filesystem::path quarantine_dir;  // defaults to out_dir
  std::vector<Language> languages = {Language::En};
};

struct BatchSummary {
  std::size_t inputs = 0;
  std::size_t analyzed = 0;
  std::vector<std::string> written;  // output file names, sorted
  std::vector<QuarantineRecord> quarantined;
};

// Quarantine reasons are restricted to MissingLandmark, OutOfBounds,
// ParseError, Degenerate and DuplicateId. Throws Error(Io) only for
// directory-level failures.
BatchSummary batch_process(const std::filesystem::path& in_dir, const BatchOptions& opts,
                           const AnalysisConfig& config);

}  // namespace cephkit
