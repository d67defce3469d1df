#include "cephkit/error.hpp"
#include "cephkit/geometry.hpp"
#include "cephkit/ingest.hpp"
#include "cephkit/pipeline.hpp"
#include "cephkit/report.hpp"
#include "cephkit/service.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>

namespace py = pybind11;
using namespace cephkit;

namespace {

struct Workbench {
  AnalysisConfig config;
};

AnalysisConfig make_config(const std::string& norms, const std::string& thresholds, const std::string& templates) {
  if (norms.empty() && thresholds.empty() && templates.empty()) return AnalysisConfig{};
  return load_config(norms, thresholds, templates);
}

Language lang_of(const std::string& code) {
  auto l = parse_language(code);
  if (!l) throw Error(ErrorCode::BadRequest, "unknown language \"" + code + "\"");
  return *l;
}

CaseAnalysis run_json(const std::string& case_json, const AnalysisConfig& config) {
  return run_case(parse_landmarks_json(case_json), config);
}

}  // namespace

PYBIND11_MODULE(_cephkit, m) {
  py::exception<Error>(m, "CephError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object cls = py::module_::import("cephkit._cephkit").attr("CephError");
      py::object inst = cls(py::str(e.what()));
      inst.attr("code") = py::str(std::string(to_string(e.code())));
      inst.attr("field") = e.field ? py::object(py::str(*e.field)) : py::object(py::none());
      inst.attr("line") = e.line ? py::object(py::int_(*e.line)) : py::object(py::none());
      PyErr_SetObject(cls.ptr(), inst.ptr());
    }
  });

  m.def("version", [] { return std::string(version()); });
  m.def("format_number", &format_number, py::arg("value"));

  m.def("angle_at_vertex", [](std::pair<double, double> v, std::pair<double, double> a, std::pair<double, double> b) {
    return angle_at_vertex({v.first, v.second}, {a.first, a.second}, {b.first, b.second});
  });
  m.def("directed_line_angle", [](std::pair<double, double> a1, std::pair<double, double> a2,
                                  std::pair<double, double> b1, std::pair<double, double> b2) {
    return directed_line_angle({a1.first, a1.second}, {a2.first, a2.second}, {b1.first, b1.second},
                               {b2.first, b2.second});
  });
  m.def("signed_point_line_distance",
        [](std::pair<double, double> p, std::pair<double, double> a, std::pair<double, double> b) {
          return signed_point_line_distance({p.first, p.second}, {a.first, a.second}, {b.first, b.second});
        });

  py::class_<Workbench>(m, "Workbench")
      .def(py::init(
               [](const std::string& norms, const std::string& thresholds, const std::string& templates) {
                 return Workbench{make_config(norms, thresholds, templates)};
               }),
           py::arg("norms_path") = "", py::arg("thresholds_path") = "", py::arg("templates_dir") = "")
      .def("analyze_json",
           [](const Workbench& s, const std::string& case_json) {
             CaseAnalysis a;
             {
               py::gil_scoped_release nogil;
               a = run_json(case_json, s.config);
             }
             return analysis_to_json(a, s.config).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
           },
           py::arg("case_json"))
      .def("report",
           [](const Workbench& s, const std::string& case_json, const std::string& lang, const std::string& format) {
             auto fmt = parse_report_format(format);
             if (!fmt) throw Error(ErrorCode::BadRequest, "unknown report format \"" + format + "\"");
             const auto a = run_json(case_json, s.config);
             return render_report(make_report(a, lang_of(lang), s.config), *fmt);
           },
           py::arg("case_json"), py::arg("lang") = "en", py::arg("format") = "text")
      .def("prompt",
           [](const Workbench& s, const std::string& case_json, const std::string& lang, std::uint64_t seed) {
             const auto a = run_json(case_json, s.config);
             return build_prompt(a.analysis.batch.results, lang_of(lang), seed, s.config.resources.instructions).text;
           },
           py::arg("case_json"), py::arg("lang") = "en", py::arg("seed") = 0);
}
