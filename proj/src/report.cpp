#include "cephkit/report.hpp"

#include "embedded_data.hpp"
#include "text_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <sstream>

namespace cephkit {
namespace {

using M = MeasurementId;

constexpr std::array<M, 9> kReferenceIds = {
    M::SNA, M::SNB, M::ANB, M::YAXIS, M::MPFH, M::FACIAL, M::U1NA_MM, M::L1NB_MM, M::POGNB_MM,
};

// Labels of the reference block. Fixed wire text, independent of templates.
constexpr std::array<std::string_view, 9> kReferenceLabelsEn = {
    "SNA angle",    "SNB angle",      "ANB angle",      "Y-axis angle",   "MP-FH angle",
    "facial angle", "U1-NA distance", "L1-NB distance", "Po-NB distance",
};
constexpr std::array<std::string_view, 9> kReferenceLabelsZh = {
    "SNA 角", "SNB 角", "ANB 角", "Y 轴角", "MP-FH 角", "面 角", "U1-NA 距离", "L1-NB 距离", "Po-NB 距离",
};

constexpr std::array<std::string_view, 8> kCategoryNames = {
    "MAXILLA", "MANDIBLE", "SAGITTAL_CLASS", "VERTICAL", "CHIN", "UPPER_INCISOR", "LOWER_INCISOR", "INTERINCISAL",
};

constexpr std::array<FindingCategory, 6> kGradedCategories = {
    FindingCategory::Maxilla,      FindingCategory::Mandible,     FindingCategory::Chin,
    FindingCategory::UpperIncisor, FindingCategory::LowerIncisor, FindingCategory::Interincisal,
};

std::string cat(FindingCategory c) { return std::string(category_name(c)); }

// The deviation with the largest |z| among the given ids; ties keep the first.
std::optional<Finding> graded_finding(FindingCategory c, std::span<const Deviation> deviations,
                                      std::initializer_list<M> ids) {
  const Deviation* pick = nullptr;
  std::vector<M> sources;
  for (M id : ids) {
    const Deviation* d = find(deviations, id);
    if (!d) continue;
    sources.push_back(id);
    if (!pick || std::abs(d->z) > std::abs(pick->z)) pick = d;
  }
  if (!pick) return std::nullopt;
  return Finding{c, std::string(grade_name(pick->grade)), std::move(sources)};
}

std::string capitalize_ascii(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

const Finding* find_finding(std::span<const Finding> findings, FindingCategory c) {
  for (const auto& f : findings) {
    if (f.category == c) return &f;
  }
  return nullptr;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

TemplateSet load_templates(const std::filesystem::path& file, std::string_view fallback, Language lang) {
  if (std::filesystem::exists(file)) return TemplateSet::parse(read_file(file.string()), lang);
  return TemplateSet::parse(fallback, lang);
}

}  // namespace

std::string_view language_code(Language lang) noexcept { return lang == Language::Zh ? "zh" : "en"; }

std::optional<Language> parse_language(std::string_view code) noexcept {
  if (code == "en") return Language::En;
  if (code == "zh") return Language::Zh;
  return std::nullopt;
}

std::string_view category_name(FindingCategory c) noexcept { return kCategoryNames[static_cast<std::size_t>(c)]; }

std::string Finding::key() const { return cat(category) + "/" + level; }

bool Finding::abnormal() const { return level != "NORMAL" && level != "CLASS_I" && level != "AVERAGE"; }

TemplateSet TemplateSet::parse(std::string_view text, Language lang) {
  TemplateSet t;
  t.lang_ = lang;
  for_each_record(text, [&](std::size_t line_no, std::string_view key, std::string_view value) {
    if (!t.entries_.emplace(std::string(key), std::string(value)).second) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": duplicate key " + std::string(key));
    }
  });
  return t;
}

const std::string& TemplateSet::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw Error(ErrorCode::MissingTemplate,
                "missing template " + key + " for language " + std::string(language_code(lang_)));
  }
  return it->second;
}

std::vector<std::string> required_template_keys() {
  std::vector<std::string> keys = {
      "section.findings",   "section.diagnosis", "section.recommendations", "section.measurements",
      "report.normal_summary", "format.list_sep", "format.line_end", "format.sentence_sep",
      "diagnosis.none",
  };
  for (FindingCategory c : kGradedCategories) {
    for (std::string_view g : {"LOW", "NORMAL", "HIGH"}) keys.push_back("finding." + cat(c) + "." + std::string(g));
    for (std::string_view g : {"LOW", "HIGH"}) keys.push_back("diagnosis." + cat(c) + "." + std::string(g));
  }
  for (std::string_view s : {"CLASS_I", "CLASS_II", "CLASS_III"}) {
    keys.push_back("finding.SAGITTAL_CLASS." + std::string(s));
    keys.push_back("diagnosis.SAGITTAL_CLASS." + std::string(s));
  }
  for (std::string_view v : {"LOW_ANGLE", "AVERAGE", "HIGH_ANGLE"}) keys.push_back("finding.VERTICAL." + std::string(v));
  for (std::string_view v : {"LOW_ANGLE", "HIGH_ANGLE"}) keys.push_back("diagnosis.VERTICAL." + std::string(v));
  for (std::string_view r : {"skeletal_imaging", "class_ii", "class_iii", "high_angle", "low_angle", "incisor", "chin",
                             "routine", "followup"}) {
    keys.push_back("rec." + std::string(r));
  }
  for (M id : all_measurements()) keys.push_back("label." + std::string(measurement_name(id)));
  for (std::string_view u : {"deg", "mm"}) keys.push_back("unit." + std::string(u));
  for (std::string_view g : {"LOW", "NORMAL", "HIGH"}) keys.push_back("grade." + std::string(g));
  return keys;
}

void InstructionSet::add_file(std::string_view text, Language lang) {
  for_each_record(text, [&](std::size_t, std::string_view, std::string_view value) { add(lang, std::string(value)); });
}

void InstructionSet::add(Language lang, std::string instruction) { by_lang_[lang].push_back(std::move(instruction)); }

std::span<const std::string> InstructionSet::get(Language lang) const {
  auto it = by_lang_.find(lang);
  if (it == by_lang_.end()) return {};
  return it->second;
}

const ReportResources& default_resources() {
  static const ReportResources r = [] {
    ReportResources res{TemplateSet::parse(embedded::templates_en(), Language::En),
                        TemplateSet::parse(embedded::templates_zh(), Language::Zh),
                        {}};
    res.instructions.add_file(embedded::instructions_en(), Language::En);
    res.instructions.add_file(embedded::instructions_zh(), Language::Zh);
    return res;
  }();
  return r;
}

ReportResources load_resources(const std::string& dir) {
  const std::filesystem::path base(dir);
  ReportResources res{load_templates(base / "templates.en", embedded::templates_en(), Language::En),
                      load_templates(base / "templates.zh", embedded::templates_zh(), Language::Zh),
                      {}};
  for (auto [name, fallback, lang] : {std::tuple{"instructions.en", embedded::instructions_en(), Language::En},
                                      std::tuple{"instructions.zh", embedded::instructions_zh(), Language::Zh}}) {
    const auto file = base / name;
    if (std::filesystem::exists(file)) {
      res.instructions.add_file(read_file(file.string()), lang);
    } else {
      res.instructions.add_file(fallback, lang);
    }
  }
  return res;
}

std::vector<Finding> derive_findings(std::span<const MeasurementResult> results,
                                     std::span<const Deviation> deviations,
                                     const SkeletalClassification& classification) {
  // Grades only exist for computed measurements, but guard against stray
  // deviations that have no matching result.
  std::vector<Deviation> usable;
  for (const auto& d : deviations) {
    if (find(results, d.id)) usable.push_back(d);
  }

  std::vector<Finding> out;
  auto push = [&](std::optional<Finding> f) {
    if (f) out.push_back(std::move(*f));
  };
  push(graded_finding(FindingCategory::Maxilla, usable, {M::SNA}));
  push(graded_finding(FindingCategory::Mandible, usable, {M::SNB}));
  if (classification.sagittal) {
    out.push_back({FindingCategory::SagittalClass, std::string(sagittal_name(*classification.sagittal)), {M::ANB}});
  }
  if (classification.vertical) {
    out.push_back({FindingCategory::Vertical, std::string(vertical_name(*classification.vertical)), {M::MPFH}});
  }
  push(graded_finding(FindingCategory::Chin, usable, {M::POGNB_MM}));
  push(graded_finding(FindingCategory::UpperIncisor, usable, {M::U1NA_DEG, M::U1NA_MM}));
  push(graded_finding(FindingCategory::LowerIncisor, usable, {M::L1NB_DEG, M::L1NB_MM}));
  push(graded_finding(FindingCategory::Interincisal, usable, {M::INTERINCISAL}));
  return out;
}

std::optional<ReportFormat> parse_report_format(std::string_view name) noexcept {
  if (name == "text") return ReportFormat::Text;
  if (name == "markdown") return ReportFormat::Markdown;
  if (name == "structured") return ReportFormat::Structured;
  return std::nullopt;
}

DiagnosticReport build_report(std::span<const Finding> findings, std::span<const MeasurementResult> results,
                              std::span<const Deviation> deviations, const TemplateSet& t) {
  DiagnosticReport r;
  r.language = t.language();
  r.findings.assign(findings.begin(), findings.end());

  auto key_of = [](const char* prefix, const Finding& f) {
    return std::string(prefix) + cat(f.category) + "." + f.level;
  };

  std::vector<std::string> sentences;
  for (const auto& f : findings) sentences.push_back(t.get(key_of("finding.", f)));
  r.summary = sentences.empty() ? t.get("report.normal_summary") : join(sentences, t.get("format.sentence_sep"));

  const std::string& sep = t.get("format.list_sep");
  const std::string& end = t.get("format.line_end");
  auto abnormal = [&](FindingCategory c) -> const Finding* {
    const Finding* f = find_finding(findings, c);
    return f && f->abnormal() ? f : nullptr;
  };

  // Skeletal sagittal line: jaw positions, then the class.
  std::vector<std::string> skeletal;
  for (auto c : {FindingCategory::Maxilla, FindingCategory::Mandible}) {
    if (const auto* f = abnormal(c)) skeletal.push_back(t.get(key_of("diagnosis.", *f)));
  }
  if (const auto* cls = find_finding(findings, FindingCategory::SagittalClass)) {
    if (cls->abnormal() || !skeletal.empty()) skeletal.push_back(t.get(key_of("diagnosis.", *cls)));
  }
  if (!skeletal.empty()) r.diagnosis_lines.push_back(capitalize_ascii(join(skeletal, sep)) + end);

  if (const auto* f = abnormal(FindingCategory::Vertical)) r.diagnosis_lines.push_back(t.get(key_of("diagnosis.", *f)) + end);

  std::vector<std::string> dental;
  for (auto c : {FindingCategory::Chin, FindingCategory::UpperIncisor, FindingCategory::LowerIncisor,
                 FindingCategory::Interincisal}) {
    if (const auto* f = abnormal(c)) dental.push_back(t.get(key_of("diagnosis.", *f)));
  }
  if (!dental.empty()) r.diagnosis_lines.push_back(capitalize_ascii(join(dental, sep)) + end);

  if (r.diagnosis_lines.empty()) r.diagnosis_lines.push_back(t.get("diagnosis.none") + end);

  // Recommendation rule map.
  const Finding* cls = find_finding(findings, FindingCategory::SagittalClass);
  const bool sagittal_problem = (cls && cls->abnormal()) || abnormal(FindingCategory::Maxilla) ||
                                abnormal(FindingCategory::Mandible);
  std::vector<std::string> recs;
  if (sagittal_problem) recs.push_back("skeletal_imaging");
  if (cls && cls->level == "CLASS_II") recs.push_back("class_ii");
  if (cls && cls->level == "CLASS_III") recs.push_back("class_iii");
  if (const auto* v = abnormal(FindingCategory::Vertical)) {
    recs.push_back(v->level == "HIGH_ANGLE" ? "high_angle" : "low_angle");
  }
  if (abnormal(FindingCategory::UpperIncisor) || abnormal(FindingCategory::LowerIncisor) ||
      abnormal(FindingCategory::Interincisal)) {
    recs.push_back("incisor");
  }
  if (abnormal(FindingCategory::Chin)) recs.push_back("chin");
  const bool any_abnormal = std::any_of(findings.begin(), findings.end(), [](const Finding& f) { return f.abnormal(); });
  recs.push_back(any_abnormal ? "followup" : "routine");
  for (const auto& k : recs) r.recommendations.push_back(t.get("rec." + k) + end);

  for (const auto& res : results) {
    MeasurementLine line{res.id, t.get("label." + std::string(measurement_name(res.id))), format_number(res.value),
                         t.get("unit." + std::string(unit_name(res.unit))), std::nullopt};
    if (const auto* d = find(deviations, res.id)) line.grade = d->grade;
    r.measurements.push_back(std::move(line));
  }

  // Resolve every template the renderer may need up front so rendering
  // itself cannot fail half way.
  for (const char* k : {"section.findings", "section.diagnosis", "section.recommendations", "section.measurements"}) {
    (void)t.get(k);
  }
  for (const auto& m : r.measurements) {
    if (m.grade) (void)t.get("grade." + std::string(grade_name(*m.grade)));
  }
  r.section_titles = {t.get("section.findings"), t.get("section.diagnosis"), t.get("section.recommendations"),
                      t.get("section.measurements")};
  for (const auto& m : r.measurements) {
    r.grade_words.push_back(m.grade ? t.get("grade." + std::string(grade_name(*m.grade))) : std::string());
  }
  r.finding_texts = std::move(sentences);
  return r;
}

std::string render_report(const DiagnosticReport& r, ReportFormat format) {
  std::ostringstream out;
  auto measurement_text = [&](std::size_t i) {
    const auto& m = r.measurements[i];
    std::string s = m.label + ": " + m.value + " " + m.unit;
    if (!r.grade_words[i].empty()) s += " (" + r.grade_words[i] + ")";
    return s;
  };

  switch (format) {
    case ReportFormat::Text: {
      out << r.section_titles[0] << "\n" << r.summary << "\n\n";
      out << r.section_titles[1] << "\n";
      for (std::size_t i = 0; i < r.diagnosis_lines.size(); ++i) out << i + 1 << ". " << r.diagnosis_lines[i] << "\n";
      out << "\n" << r.section_titles[2] << "\n";
      for (std::size_t i = 0; i < r.recommendations.size(); ++i) out << i + 1 << ". " << r.recommendations[i] << "\n";
      out << "\n" << r.section_titles[3] << "\n";
      for (std::size_t i = 0; i < r.measurements.size(); ++i) out << measurement_text(i) << "\n";
      break;
    }
    case ReportFormat::Markdown: {
      out << "## " << r.section_titles[0] << "\n\n" << r.summary << "\n\n";
      out << "## " << r.section_titles[1] << "\n\n";
      for (std::size_t i = 0; i < r.diagnosis_lines.size(); ++i) out << i + 1 << ". " << r.diagnosis_lines[i] << "\n";
      out << "\n## " << r.section_titles[2] << "\n\n";
      for (std::size_t i = 0; i < r.recommendations.size(); ++i) out << i + 1 << ". " << r.recommendations[i] << "\n";
      out << "\n## " << r.section_titles[3] << "\n\n";
      for (std::size_t i = 0; i < r.measurements.size(); ++i) out << "- " << measurement_text(i) << "\n";
      break;
    }
    case ReportFormat::Structured: {
      nlohmann::ordered_json j;
      j["language"] = language_code(r.language);
      j["findings"] = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < r.findings.size(); ++i) {
        const auto& f = r.findings[i];
        nlohmann::ordered_json fj;
        fj["category"] = category_name(f.category);
        fj["level"] = f.level;
        fj["key"] = f.key();
        fj["sources"] = nlohmann::ordered_json::array();
        for (M id : f.sources) fj["sources"].push_back(measurement_name(id));
        fj["text"] = r.finding_texts[i];
        j["findings"].push_back(std::move(fj));
      }
      j["summary"] = r.summary;
      j["diagnosis"] = r.diagnosis_lines;
      j["recommendations"] = r.recommendations;
      j["measurements"] = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < r.measurements.size(); ++i) {
        const auto& m = r.measurements[i];
        nlohmann::ordered_json mj;
        mj["id"] = measurement_name(m.id);
        mj["label"] = m.label;
        mj["value"] = m.value;
        mj["unit"] = m.unit;
        mj["grade"] = m.grade ? nlohmann::ordered_json(grade_name(*m.grade)) : nlohmann::ordered_json(nullptr);
        j["measurements"].push_back(std::move(mj));
      }
      out << j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
      break;
    }
  }
  return out.str();
}

std::string format_number(double value) {
  // Round on the shortest decimal representation so that values such as
  // 84.405 (stored as 84.40499...) still round up as written.
  char buf[512];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed);
  if (ec != std::errc()) return "nan";
  std::string s(buf, end);

  bool negative = !s.empty() && s[0] == '-';
  if (negative) s.erase(0, 1);
  auto dot = s.find('.');
  std::string int_part = dot == std::string::npos ? s : s.substr(0, dot);
  std::string frac = dot == std::string::npos ? "" : s.substr(dot + 1);
  frac.resize(std::max<std::size_t>(frac.size(), 3), '0');

  // digits = int_part + first two fraction digits, as a decimal string
  std::string digits = int_part + frac.substr(0, 2);
  if (frac[2] >= '5') {
    int i = static_cast<int>(digits.size()) - 1;
    while (i >= 0 && digits[i] == '9') digits[i--] = '0';
    if (i < 0) {
      digits.insert(digits.begin(), '1');
    } else {
      ++digits[i];
    }
  }
  std::string ip = digits.substr(0, digits.size() - 2);
  std::string fp = digits.substr(digits.size() - 2);
  while (!fp.empty() && fp.back() == '0') fp.pop_back();
  std::string result = fp.empty() ? ip : ip + "." + fp;
  if (negative && result != "0") result.insert(result.begin(), '-');
  return result;
}

std::span<const MeasurementId> reference_measurements() noexcept { return kReferenceIds; }

std::string format_reference_suffix(std::span<const MeasurementResult> results, Language lang) {
  const bool zh = lang == Language::Zh;
  std::string out = zh ? "\n 参考指标:" : "\nReference measurements: ";
  for (std::size_t i = 0; i < kReferenceIds.size(); ++i) {
    const auto* r = find(results, kReferenceIds[i]);
    if (!r) {
      throw Error(ErrorCode::MissingMeasurement,
                  "reference block needs " + std::string(measurement_name(kReferenceIds[i])));
    }
    if (i) out += zh ? "," : ", ";
    out += zh ? kReferenceLabelsZh[i] : kReferenceLabelsEn[i];
    out += zh ? ":" : ": ";
    out += format_number(r->value);
  }
  return out;
}

std::size_t pick_index(std::uint64_t seed, std::size_t n) {
  if (n == 0) return 0;
  const unsigned __int128 wide = static_cast<unsigned __int128>(splitmix64(seed)) * n;
  return static_cast<std::size_t>(wide >> 64);
}

PromptSample build_prompt(std::span<const MeasurementResult> results, Language lang, std::uint64_t seed,
                          const InstructionSet& instructions, std::string_view image_token) {
  const auto pool = instructions.get(lang);
  if (pool.empty()) {
    throw Error(ErrorCode::EmptyInstructionSet,
                "no instructions for language " + std::string(language_code(lang)));
  }
  const std::size_t index = pick_index(seed, pool.size());
  std::string text = "###Doctor: ";
  text += image_token;
  text += pool[index];
  text += format_reference_suffix(results, lang);
  text += "###Assistant: ";
  return {std::move(text), lang, index, seed};
}

}  // namespace cephkit
