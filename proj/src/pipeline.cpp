#include "cephkit/pipeline.hpp"

#include "text_util.hpp"

#include <algorithm>
#include <map>

namespace cephkit {
namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

ojson landmark_list(const std::vector<LandmarkId>& ids) {
  ojson a = ojson::array();
  for (auto id : ids) a.push_back(landmark_name(id));
  return a;
}

std::string safe_name(std::string_view s) {
  std::string out;
  for (char ch : s) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-' ||
                    ch == '_' || ch == '.';
    out += ok ? ch : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "case";
  return out;
}

bool is_batch_output(const std::string& name) {
  return name.ends_with(".analysis.json") || name.find(".report.") != std::string::npos || name == "quarantine.tsv";
}

ErrorCode quarantine_reason(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingLandmark:
    case ErrorCode::OutOfBounds:
    case ErrorCode::ParseError:
    case ErrorCode::Degenerate:
    case ErrorCode::DuplicateId: return code;
    default: return ErrorCode::ParseError;
  }
}

std::string tsv_field(std::string s) {
  for (char& ch : s) {
    if (ch == '\t' || ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

}  // namespace

AnalysisConfig load_config(const std::string& norms_path, const std::string& thresholds_path,
                           const std::string& templates_dir) {
  AnalysisConfig cfg;
  if (!norms_path.empty()) cfg.norms = load_norms(read_file(norms_path));
  if (!thresholds_path.empty()) cfg.thresholds = load_thresholds(read_file(thresholds_path));
  if (!templates_dir.empty()) {
    if (!fs::is_directory(templates_dir)) throw Error(ErrorCode::Io, "templates directory not found: " + templates_dir);
    cfg.resources = load_resources(templates_dir);
  }
  return cfg;
}

Analysis analyze_case(const CaseFile& c, const AnalysisConfig& config) {
  if (c.image_size_px) {
    const auto [w, h] = *c.image_size_px;
    for (const auto& [id, p] : c.landmarks.points) {
      if (p.x < 0 || p.y < 0 || p.x > w || p.y > h) {
        Error e(ErrorCode::OutOfBounds, "landmark " + std::string(landmark_name(id)) + " lies outside the " +
                                            std::to_string(static_cast<long long>(w)) + "x" +
                                            std::to_string(static_cast<long long>(h)) + " image");
        e.field = "landmarks." + std::string(landmark_name(id));
        throw e;
      }
    }
  }

  Analysis a;
  try {
    a = analyze(c.landmarks, config.norms, config.thresholds);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::OrientationUndetermined) throw;
    throw Error(ErrorCode::MissingLandmark, e.what());
  }
  for (const auto& s : a.batch.skipped) {
    if (s.code == ErrorCode::Degenerate) {
      throw Error(ErrorCode::Degenerate, std::string(measurement_name(s.id)) + ": " + s.reason);
    }
  }
  if (a.batch.results.empty()) {
    throw Error(ErrorCode::MissingLandmark, "no measurement can be computed from the supplied landmarks");
  }
  return a;
}

CaseAnalysis run_case(const CaseFile& c, const AnalysisConfig& config) {
  CaseAnalysis out{c, analyze_case(c, config), {}};
  out.findings = derive_findings(out.analysis.batch.results, out.analysis.deviations, out.analysis.classification);
  return out;
}

DiagnosticReport make_report(const CaseAnalysis& a, Language lang, const AnalysisConfig& config) {
  return build_report(a.findings, a.analysis.batch.results, a.analysis.deviations, config.resources.templates(lang));
}

nlohmann::ordered_json analysis_to_json(const CaseAnalysis& a, const AnalysisConfig& config) {
  const auto& an = a.analysis;
  ojson j;
  j["case_id"] = a.input.effective_case_id();
  j["orientation_input"] = orientation_name(a.input.landmarks.orientation);
  if (an.normalized.calibration) j["calibration_mm_per_px"] = an.normalized.calibration->mm_per_px();

  j["measurements"] = ojson::array();
  for (const auto& r : an.batch.results) {
    ojson m;
    m["id"] = measurement_name(r.id);
    m["value"] = r.value;
    m["unit"] = unit_name(r.unit);
    m["inputs"] = landmark_list(r.inputs_used);
    j["measurements"].push_back(std::move(m));
  }
  j["skipped"] = ojson::array();
  for (const auto& s : an.batch.skipped) {
    ojson m;
    m["id"] = measurement_name(s.id);
    m["code"] = to_string(s.code);
    m["reason"] = s.reason;
    m["missing"] = landmark_list(s.missing);
    j["skipped"].push_back(std::move(m));
  }
  j["deviations"] = ojson::array();
  for (const auto& d : an.deviations) {
    ojson m;
    m["id"] = measurement_name(d.id);
    m["value"] = d.value;
    m["mean"] = d.mean;
    m["sd"] = d.sd;
    m["z"] = d.z;
    m["grade"] = grade_name(d.grade);
    j["deviations"].push_back(std::move(m));
  }
  const auto& c = an.classification;
  ojson cls;
  cls["sagittal"] = c.sagittal ? ojson(sagittal_name(*c.sagittal)) : ojson(nullptr);
  cls["vertical"] = c.vertical ? ojson(vertical_name(*c.vertical)) : ojson(nullptr);
  cls["thresholds"] = {{"anb_lo", c.thresholds.anb_lo},
                       {"anb_hi", c.thresholds.anb_hi},
                       {"mpfh_lo", c.thresholds.mpfh_lo},
                       {"mpfh_hi", c.thresholds.mpfh_hi}};
  j["classification"] = std::move(cls);
  j["findings"] = ojson::array();
  for (const auto& f : a.findings) j["findings"].push_back(f.key());
  j["norms_provenance"] = config.norms.provenance;
  return j;
}

BatchSummary batch_process(const fs::path& in_dir, const BatchOptions& opts, const AnalysisConfig& config) {
  std::error_code ec;
  if (!fs::is_directory(in_dir, ec)) throw Error(ErrorCode::Io, "not a directory: " + in_dir.string());
  const fs::path qdir = opts.quarantine_dir.empty() ? opts.out_dir : opts.quarantine_dir;
  for (const auto& d : {opts.out_dir, qdir}) {
    fs::create_directories(d, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + d.string() + ": " + ec.message());
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in_dir, ec)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (is_batch_output(name) || !detect_landmark_format(name)) continue;
    files.push_back(entry.path());
  }
  if (ec) throw Error(ErrorCode::Io, "cannot list " + in_dir.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());

  BatchSummary summary;
  summary.inputs = files.size();
  std::map<std::string, std::string> claimed;  // output stem -> input file
  for (const auto& path : files) {
    const auto name = path.filename().string();
    try {
      const auto result = run_case(load_case_file(path.string()), config);
      const auto stem = safe_name(result.input.effective_case_id());
      if (auto [it, inserted] = claimed.emplace(stem, name); !inserted) {
        throw Error(ErrorCode::DuplicateId, "case id \"" + stem + "\" already produced by " + it->second);
      }
      const auto analysis_name = stem + ".analysis.json";
      write_file((opts.out_dir / analysis_name).string(), analysis_to_json(result, config).dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n");
      summary.written.push_back(analysis_name);
      for (auto lang : opts.languages) {
        const auto report_name = stem + ".report." + std::string(language_code(lang)) + ".md";
        write_file((opts.out_dir / report_name).string(),
                   render_report(make_report(result, lang, config), ReportFormat::Markdown));
        summary.written.push_back(report_name);
      }
      ++summary.analyzed;
    } catch (const Error& e) {
      summary.quarantined.push_back({name, quarantine_reason(e.code()), e.what()});
    }
  }

  std::string tsv = "path\treason\tdetail\n";
  for (const auto& q : summary.quarantined) {
    tsv += tsv_field(q.path) + "\t" + std::string(to_string(q.reason)) + "\t" + tsv_field(q.detail) + "\n";
  }
  write_file((qdir / "quarantine.tsv").string(), tsv);
  std::sort(summary.written.begin(), summary.written.end());
  return summary;
}

}  // namespace cephkit
