#pragma once

#include "cephkit/steiner.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cephkit {

enum class Language { En, Zh };

std::string_view language_code(Language lang) noexcept;
std::optional<Language> parse_language(std::string_view code) noexcept;

enum class FindingCategory {
  Maxilla,
  Mandible,
  SagittalClass,
  Vertical,
  Chin,
  UpperIncisor,
  LowerIncisor,
  Interincisal,
};

std::string_view category_name(FindingCategory c) noexcept;

struct Finding {
  FindingCategory category;
  std::string level;  // grade name, sagittal class or vertical pattern
  std::vector<MeasurementId> sources;

  // "MAXILLA/HIGH"
  std::string key() const;
  bool abnormal() const;

  friend bool operator==(const Finding&, const Finding&) = default;
};

// key<TAB>template records for one language.
class TemplateSet {
 public:
  static TemplateSet parse(std::string_view text, Language lang);

  Language language() const noexcept { return lang_; }
  // Throws Error(MissingTemplate).
  const std::string& get(const std::string& key) const;
  bool contains(const std::string& key) const { return entries_.contains(key); }
  const std::map<std::string, std::string>& entries() const noexcept { return entries_; }

 private:
  Language lang_ = Language::En;
  std::map<std::string, std::string> entries_;
};

// Every key the report renderer may look up.
std::vector<std::string> required_template_keys();

class InstructionSet {
 public:
  // One instruction per key<TAB>template record, kept in file order.
  void add_file(std::string_view text, Language lang);
  void add(Language lang, std::string instruction);
  std::span<const std::string> get(Language lang) const;

 private:
  std::map<Language, std::vector<std::string>> by_lang_;
};

struct ReportResources {
  TemplateSet en;
  TemplateSet zh;
  InstructionSet instructions;

  const TemplateSet& templates(Language lang) const { return lang == Language::Zh ? zh : en; }
};

// Shipped templates and instructions compiled into the library.
const ReportResources& default_resources();
// Loads templates.{en,zh} and instructions.{en,zh} from dir; missing files
// fall back to the shipped defaults.
ReportResources load_resources(const std::string& dir);

std::vector<Finding> derive_findings(std::span<const MeasurementResult> results,
                                     std::span<const Deviation> deviations,
                                     const SkeletalClassification& classification);

struct MeasurementLine {
  MeasurementId id;
  std::string label;
  std::string value;  // formatted
  std::string unit;
  std::optional<Grade> grade;
};

struct DiagnosticReport {
  Language language = Language::En;
  std::vector<Finding> findings;
  std::string summary;  // narrative findings paragraph
  std::vector<std::string> diagnosis_lines;
  std::vector<std::string> recommendations;
  std::vector<MeasurementLine> measurements;

  // Resolved template text so rendering needs no template lookups.
  std::vector<std::string> finding_texts;             // parallel to findings
  std::array<std::string, 4> section_titles;          // findings, diagnosis, recommendations, measurements
  std::vector<std::string> grade_words;               // parallel to measurements; empty when ungraded
};

enum class ReportFormat { Text, Markdown, Structured };

std::optional<ReportFormat> parse_report_format(std::string_view name) noexcept;

DiagnosticReport build_report(std::span<const Finding> findings, std::span<const MeasurementResult> results,
                              std::span<const Deviation> deviations, const TemplateSet& templates);

// Structured output is the JSON record used on the wire.
std::string render_report(const DiagnosticReport& report, ReportFormat format);

// Round half away from zero to two decimals, then drop trailing zeros and a
// dangling decimal point: 84.410 -> "84.41", 85.70 -> "85.7", 2.00 -> "2".
std::string format_number(double value);

// The nine-value reference block appended to prompts. Throws
// Error(MissingMeasurement) if any of the nine is absent.
std::string format_reference_suffix(std::span<const MeasurementResult> results, Language lang);

// The nine measurements the reference block reports, in order.
std::span<const MeasurementId> reference_measurements() noexcept;

inline constexpr std::string_view kDefaultImageToken = "<ImageFeature>";

struct PromptSample {
  std::string text;
  Language language;
  std::size_t instruction_index;
  std::uint64_t seed;
};

// Pure function of (seed, n); uniform over [0, n).
std::size_t pick_index(std::uint64_t seed, std::size_t n);

PromptSample build_prompt(std::span<const MeasurementResult> results, Language lang, std::uint64_t seed,
                          const InstructionSet& instructions, std::string_view image_token = kDefaultImageToken);

}  // namespace cephkit
