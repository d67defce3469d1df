#include "cephkit/dialogue.hpp"
#include "cephkit/error.hpp"
#include "cephkit/ingest.hpp"
#include "cephkit/pipeline.hpp"
#include "cephkit/service.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <pthread.h>

namespace fs = std::filesystem;
using namespace cephkit;

namespace {

enum Exit { kOk = 0, kValidation = 1, kUsage = 2, kIo = 3 };

// key=value lines; '#' comments. Keys are the environment variable names.
std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::BadRequest, path + ":" + std::to_string(n) + ": expected KEY=VALUE");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

struct Settings {
  std::string config_path;
  std::string norms, thresholds, templates;
  std::map<std::string, std::string> file;

  // flag > environment > config file
  std::string resolve(const std::string& flag, const char* env) const {
    if (!flag.empty()) return flag;
    if (const char* v = std::getenv(env); v && *v) return v;
    if (auto it = file.find(env); it != file.end()) return it->second;
    return {};
  }
  std::string lookup(std::string_view key) const { return resolve({}, std::string(key).c_str()); }

  AnalysisConfig analysis_config() const {
    return load_config(resolve(norms, "CEPH_NORMS_PATH"), resolve(thresholds, "CEPH_THRESHOLDS_PATH"),
                       resolve(templates, "CEPH_TEMPLATES_DIR"));
  }
};

std::optional<LandmarkFormat> format_option(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_landmark_format(s);
}

Language language_option(const std::string& s) { return *parse_language(s); }

std::optional<double> calibration_option(double v) { return v > 0 ? std::optional<double>(v) : std::nullopt; }

std::string measurement_block(const CaseAnalysis& a) {
  std::ostringstream out;
  out << "case: " << a.input.effective_case_id() << "\n";
  out << "measurements:\n";
  for (const auto& r : a.analysis.batch.results) {
    out << "  " << measurement_name(r.id) << " " << format_number(r.value) << " " << unit_name(r.unit);
    if (const auto* d = find(a.analysis.deviations, r.id)) {
      out << "  z=" << format_number(d->z) << " " << grade_name(d->grade);
    }
    out << "\n";
  }
  for (const auto& s : a.analysis.batch.skipped) {
    out << "  " << measurement_name(s.id) << " skipped: " << to_string(s.code) << " " << s.reason << "\n";
  }
  const auto& c = a.analysis.classification;
  out << "classification:\n";
  out << "  sagittal " << (c.sagittal ? std::string(sagittal_name(*c.sagittal)) : "n/a") << "\n";
  out << "  vertical " << (c.vertical ? std::string(vertical_name(*c.vertical)) : "n/a") << "\n\n";
  return out.str();
}

void write_out(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

int exit_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Io: return kIo;
    case ErrorCode::BadRequest: return kUsage;
    default: return kValidation;
  }
}

std::string describe(const Error& e) {
  std::string s = std::string(to_string(e.code())) + ": " + e.what();
  if (e.line) s += " (line " + std::to_string(*e.line) + (e.column ? ", column " + std::to_string(*e.column) : "") + ")";
  if (e.field) s += " [" + *e.field + "]";
  return s;
}

std::vector<fs::path> case_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && detect_landmark_format(e.path().string())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Runs the HTTP service until SIGINT or SIGTERM.
int serve(ApiService& api, const std::string& host, int port) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  httplib::Server svr;
  api.mount(svr);
  if (!svr.bind_to_port(host, port)) {
    std::cerr << "cephkit: cannot bind " << host << ":" << port << "\n";
    return kIo;
  }
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    svr.stop();
  });
  std::cerr << "cephkit " << version() << " listening on " << host << ":" << port << "\n";
  svr.listen_after_bind();
  // If the server stopped for another reason, release the waiter.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return kOk;
}

std::string man_page(const CLI::App& app) {
  std::ostringstream out;
  out << ".TH CEPHKIT 1 \"\" \"cephkit " << version() << "\"\n";
  out << ".SH NAME\ncephkit \\- " << app.get_description() << "\n";
  out << ".SH SYNOPSIS\n.B cephkit\n[global options] <command> [options]\n";
  out << ".SH GLOBAL OPTIONS\n";
  for (const auto* opt : app.get_options()) {
    if (opt->get_name() == "--help" || opt->get_name().empty()) continue;
    out << ".TP\n.B " << opt->get_name() << "\n" << opt->get_description() << "\n";
  }
  out << ".SH COMMANDS\n";
  for (const auto* sub : app.get_subcommands({})) {
    out << ".SS " << sub->get_name() << "\n" << sub->get_description() << "\n";
    for (const auto* opt : sub->get_options()) {
      if (opt->get_name() == "--help") continue;
      out << ".TP\n.B " << opt->get_name() << "\n" << opt->get_description() << "\n";
    }
  }
  out << ".SH EXIT STATUS\n0 success, 1 validation or quarantine failures, 2 usage error, 3 I/O error.\n";
  out << ".SH ENVIRONMENT\nCEPH_BIND_ADDR, CEPH_NORMS_PATH, CEPH_THRESHOLDS_PATH, CEPH_TEMPLATES_DIR, CEPH_API_KEY,\n"
         "CEPH_CORS_ORIGINS, CEPH_PERSIST_DIR, CEPH_JOURNAL_PATH, CEPH_LLM_ENDPOINT, CEPH_LLM_MODEL,\n"
         "CEPH_LLM_API_KEY, CEPH_LLM_TIMEOUT_S, CEPH_LLM_FALLBACK. Flags override the environment, which\n"
         "overrides the --config file (KEY=VALUE lines using the same names).\n";
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cephalometric analysis workbench"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);
  Settings st;
  app.add_option("--config", st.config_path, "KEY=VALUE settings file (lowest precedence)");
  app.add_option("--norms", st.norms, "norm table (ID MEAN SD lines)");
  app.add_option("--thresholds", st.thresholds, "classification thresholds file");
  app.add_option("--templates", st.templates, "directory with templates.{en,zh} and instructions.{en,zh}");

  const std::vector<std::string> langs = {"en", "zh"};
  const std::vector<std::string> in_formats = {"json", "isbi19", "csv"};

  // analyze
  auto* analyze = app.add_subcommand("analyze", "measure, grade and classify one case and print the report");
  std::string a_file, a_lang = "en", a_format = "text", a_from;
  double a_mm = 0;
  analyze->add_option("file", a_file, "landmark file")->required();
  analyze->add_option("--lang", a_lang, "report language")->check(CLI::IsMember(langs));
  analyze->add_option("--format", a_format, "output format")->check(CLI::IsMember({"text", "markdown", "json"}));
  analyze->add_option("--from", a_from, "input format (default: by extension)")->check(CLI::IsMember(in_formats));
  analyze->add_option("--mm-per-px", a_mm, "calibration override for ordered or CSV input")->check(CLI::PositiveNumber);

  // batch
  auto* batch = app.add_subcommand("batch", "analyze a directory; malformed inputs are quarantined");
  std::string b_dir, b_out, b_quarantine;
  std::vector<std::string> b_langs = {"en"};
  batch->add_option("dir", b_dir, "input directory")->required();
  batch->add_option("--out", b_out, "output directory")->required();
  batch->add_option("--quarantine", b_quarantine, "directory for quarantine.tsv (default: --out)");
  batch->add_option("--lang", b_langs, "report languages")->check(CLI::IsMember(langs))->delimiter(',');

  // prompt
  auto* prompt = app.add_subcommand("prompt", "print a training prompt for one case");
  std::string p_file, p_lang = "en", p_token(kDefaultImageToken), p_from;
  std::uint64_t p_seed = 0;
  prompt->add_option("file", p_file, "landmark file")->required();
  prompt->add_option("--seed", p_seed, "instruction choice seed");
  prompt->add_option("--lang", p_lang, "prompt language")->check(CLI::IsMember(langs));
  prompt->add_option("--image-token", p_token, "image placeholder token");
  prompt->add_option("--from", p_from, "input format")->check(CLI::IsMember(in_formats));

  // export-pairs
  auto* pairs = app.add_subcommand("export-pairs", "write prompt/report training pairs for a directory of cases");
  std::string e_dir, e_out, e_lang = "en";
  std::uint64_t e_seed = 0;
  pairs->add_option("dir", e_dir, "input directory")->required();
  pairs->add_option("--out", e_out, "output file (TAB-separated, escaped)")->required();
  pairs->add_option("--seed", e_seed, "base seed; case i uses seed + i");
  pairs->add_option("--lang", e_lang, "language")->check(CLI::IsMember(langs));

  // convert
  auto* convert = app.add_subcommand("convert", "convert a landmark file between formats");
  std::string c_in, c_out, c_from, c_to;
  double c_mm = 0;
  convert->add_option("in", c_in, "input file")->required();
  convert->add_option("out", c_out, "output file")->required();
  convert->add_option("--from", c_from, "input format")->check(CLI::IsMember(in_formats));
  convert->add_option("--to", c_to, "output format")->required()->check(CLI::IsMember(in_formats));
  convert->add_option("--mm-per-px", c_mm, "calibration override")->check(CLI::PositiveNumber);

  // validate
  auto* validate = app.add_subcommand("validate", "check that a landmark file parses and can be analyzed");
  std::string v_file, v_from;
  double v_mm = 0;
  validate->add_option("file", v_file, "landmark file")->required();
  validate->add_option("--from", v_from, "input format")->check(CLI::IsMember(in_formats));
  validate->add_option("--mm-per-px", v_mm, "calibration override")->check(CLI::PositiveNumber);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service until interrupted");
  std::string s_addr;
  serve_cmd->add_option("--addr", s_addr, "HOST:PORT (env CEPH_BIND_ADDR, default 127.0.0.1:8080)");

  auto* man = app.add_subcommand("man", "print the manual page (roff)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (!st.config_path.empty()) st.file = read_config_file(st.config_path);

    if (*man) {
      std::cout << man_page(app);
      return kOk;
    }

    if (*analyze) {
      const auto cfg = st.analysis_config();
      const auto c = load_case_file(a_file, format_option(a_from), calibration_option(a_mm));
      const auto a = run_case(c, cfg);
      const auto lang = language_option(a_lang);
      const auto report = make_report(a, lang, cfg);
      if (a_format == "json") {
        nlohmann::ordered_json j;
        j["analysis"] = analysis_to_json(a, cfg);
        j["report"] = nlohmann::ordered_json::parse(render_report(report, ReportFormat::Structured));
        std::cout << j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
      } else {
        std::cout << measurement_block(a)
                  << render_report(report, a_format == "markdown" ? ReportFormat::Markdown : ReportFormat::Text);
      }
      return kOk;
    }

    if (*batch) {
      const auto cfg = st.analysis_config();
      BatchOptions opts;
      opts.out_dir = b_out;
      if (!b_quarantine.empty()) opts.quarantine_dir = b_quarantine;
      opts.languages.clear();
      for (const auto& l : b_langs) opts.languages.push_back(language_option(l));
      const auto s = batch_process(b_dir, opts, cfg);
      for (const auto& q : s.quarantined) std::cerr << "quarantined " << q.path << ": " << to_string(q.reason) << " " << q.detail << "\n";
      std::cout << "inputs " << s.inputs << "\nanalyzed " << s.analyzed << "\nquarantined " << s.quarantined.size() << "\n";
      return s.quarantined.empty() ? kOk : kValidation;
    }

    if (*prompt) {
      const auto cfg = st.analysis_config();
      const auto a = run_case(load_case_file(p_file, format_option(p_from)), cfg);
      const auto sample = build_prompt(a.analysis.batch.results, language_option(p_lang), p_seed,
                                       cfg.resources.instructions, p_token);
      std::cout << sample.text << "\n";
      return kOk;
    }

    if (*pairs) {
      const auto cfg = st.analysis_config();
      std::vector<CaseAnalysis> corpus;
      int rejected = 0;
      for (const auto& f : case_files(e_dir)) {
        try {
          corpus.push_back(run_case(load_case_file(f.string()), cfg));
        } catch (const Error& e) {
          if (e.code() == ErrorCode::Io) throw;
          std::cerr << "skipped " << f.filename().string() << ": " << describe(e) << "\n";
          ++rejected;
        }
      }
      const auto out = export_training_pairs(corpus, e_seed, language_option(e_lang), cfg);
      write_out(e_out, write_training_pairs(out));
      std::cout << "pairs " << out.size() << "\n";
      return rejected ? kValidation : kOk;
    }

    if (*convert) {
      const auto c = load_case_file(c_in, format_option(c_from), calibration_option(c_mm));
      const auto to = *parse_landmark_format(c_to);
      std::string text;
      switch (to) {
        case LandmarkFormat::Json: text = write_landmarks_json(c); break;
        case LandmarkFormat::Csv: text = write_landmarks_csv(c); break;
        case LandmarkFormat::Isbi19: text = write_landmarks_ordered_txt(c, isbi19_profile()); break;
      }
      write_out(c_out, text);
      return kOk;
    }

    if (*validate) {
      const auto cfg = st.analysis_config();
      const auto c = load_case_file(v_file, format_option(v_from), calibration_option(v_mm));
      const auto a = run_case(c, cfg);
      std::cout << "ok " << c.effective_case_id() << ": " << a.analysis.batch.results.size() << " measurements";
      if (!a.analysis.batch.skipped.empty()) std::cout << ", " << a.analysis.batch.skipped.size() << " skipped";
      std::cout << "\n";
      return kOk;
    }

    if (*serve_cmd) {
      std::string addr = st.resolve(s_addr, "CEPH_BIND_ADDR");
      if (addr.empty()) addr = "127.0.0.1:8080";
      std::pair<std::string, int> hp;
      try {
        hp = parse_bind_addr(addr);
      } catch (const Error& e) {
        std::cerr << "cephkit: " << e.what() << "\n";
        return kUsage;
      }
      ServiceConfig sc;
      sc.host = hp.first;
      sc.port = hp.second;
      sc.api_key = st.lookup("CEPH_API_KEY");
      sc.persist_dir = st.lookup("CEPH_PERSIST_DIR");
      sc.journal_path = st.lookup("CEPH_JOURNAL_PATH");
      std::stringstream origins(st.lookup("CEPH_CORS_ORIGINS"));
      for (std::string o; std::getline(origins, o, ',');) {
        if (!o.empty()) sc.cors_origins.push_back(o);
      }
      auto backend = CompletionBackendConfig::from_lookup([&](std::string_view k) { return st.lookup(k); });
      ApiService api(st.analysis_config(), std::move(backend), sc);
      return serve(api, sc.host, sc.port);
    }
  } catch (const Error& e) {
    std::cerr << "cephkit: " << describe(e) << "\n";
    return exit_for(e);
  } catch (const std::exception& e) {
    std::cerr << "cephkit: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
