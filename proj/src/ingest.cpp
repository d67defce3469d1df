#include "cephkit/ingest.hpp"

#include "embedded_data.hpp"
#include "text_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

namespace cephkit {
namespace {

using json = nlohmann::json;
using L = LandmarkId;

Error parse_error(std::string msg, std::optional<std::string> field = std::nullopt,
                  std::optional<std::size_t> line = std::nullopt) {
  Error e(ErrorCode::ParseError, std::move(msg));
  e.field = std::move(field);
  e.line = line;
  return e;
}

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

// Strict decimal parse of a whole token.
std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

// Landmark names sorted bytewise: the canonical serialization order.
std::vector<std::pair<std::string_view, Point2>> sorted_points(const LandmarkSet& s) {
  std::vector<std::pair<std::string_view, Point2>> out;
  for (const auto& [id, p] : s.points) out.emplace_back(landmark_name(id), p);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::pair<std::size_t, std::size_t> line_col(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

Orientation parse_orientation(const json& v) {
  if (!v.is_string()) throw parse_error("orientation must be a string", "orientation");
  const auto s = v.get<std::string>();
  if (s == "left") return Orientation::FacingLeft;
  if (s == "right") return Orientation::FacingRight;
  if (s == "unknown") return Orientation::Unknown;
  throw parse_error("orientation must be left, right or unknown", "orientation");
}

Point2 parse_point(const json& v, const std::string& field) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw parse_error("landmark must be [x, y]", field);
  }
  Point2 p{v[0].get<double>(), v[1].get<double>()};
  if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw parse_error("non-finite coordinate", field);
  return p;
}

void insert_point(LandmarkSet& s, std::string_view name, Point2 p, std::optional<std::size_t> line) {
  const auto id = landmark_from_name(name);
  if (!id) {
    throw parse_error("unknown landmark \"" + std::string(name) + "\"", "landmarks." + std::string(name), line);
  }
  if (!s.points.emplace(*id, p).second) {
    Error e(ErrorCode::DuplicateId, "duplicate landmark \"" + std::string(name) + "\"");
    e.field = "landmarks." + std::string(name);
    e.line = line;
    throw e;
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& ch : out) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  return out;
}

}  // namespace

std::string CaseFile::effective_case_id() const {
  if (case_id && !case_id->empty()) return *case_id;
  if (!source_path.empty()) {
    auto stem = std::filesystem::path(source_path).stem().string();
    if (!stem.empty()) return stem;
  }
  return "case";
}

const OrderProfile& isbi19_profile() {
  static const OrderProfile p{"isbi19",
                              {L::S, L::N, L::Or, L::Po, L::A, L::B, L::Pog, L::Me, L::Gn, L::Go, L::L1E, L::U1E,
                               L::UpperLip, L::LowerLip, L::Subnasale, L::SoftPog, L::PNS, L::ANS, L::Ar},
                              0.1};
  return p;
}

const OrderProfile* find_profile(std::string_view name) {
  if (name == "isbi19") return &isbi19_profile();
  return nullptr;
}

std::optional<LandmarkFormat> parse_landmark_format(std::string_view name) noexcept {
  if (name == "json") return LandmarkFormat::Json;
  if (name == "isbi19") return LandmarkFormat::Isbi19;
  if (name == "csv") return LandmarkFormat::Csv;
  return std::nullopt;
}

std::optional<LandmarkFormat> detect_landmark_format(std::string_view path) noexcept {
  const auto ext = lower(std::filesystem::path(path).extension().string());
  if (ext == ".json") return LandmarkFormat::Json;
  if (ext == ".txt") return LandmarkFormat::Isbi19;
  if (ext == ".csv") return LandmarkFormat::Csv;
  return std::nullopt;
}

CaseFile parse_landmarks_json(std::string_view bytes, std::string source_path) {
  // nlohmann keeps the last of duplicated keys, so duplicates are caught
  // while parsing.
  std::set<std::string> root_keys;
  std::set<std::string> landmark_keys;
  std::string current_root_key;
  std::optional<Error> duplicate;
  auto cb = [&](int depth, json::parse_event_t ev, json& parsed) {
    if (ev != json::parse_event_t::key || duplicate) return true;
    const auto key = parsed.get<std::string>();
    if (depth == 1) {
      current_root_key = key;
      if (!root_keys.insert(key).second) duplicate = parse_error("duplicate key \"" + key + "\"", key);
    } else if (depth == 2 && current_root_key == "landmarks") {
      if (!landmark_keys.insert(key).second) {
        Error e(ErrorCode::DuplicateId, "duplicate landmark \"" + key + "\"");
        e.field = "landmarks." + key;
        duplicate = e;
      }
    }
    return true;
  };

  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end(), cb);
  } catch (const json::parse_error& e) {
    auto [line, col] = line_col(bytes, e.byte == 0 ? 0 : e.byte - 1);
    Error err(ErrorCode::ParseError, std::string("malformed JSON: ") + e.what());
    err.line = line;
    err.column = col;
    throw err;
  } catch (const json::out_of_range& e) {
    // number overflow such as 1e99999
    throw parse_error(std::string("malformed JSON: ") + e.what());
  }
  if (duplicate) throw *duplicate;
  if (!doc.is_object()) throw parse_error("document must be a JSON object");

  CaseFile c;
  c.source_path = std::move(source_path);
  if (auto it = doc.find("case_id"); it != doc.end() && !it->is_null()) {
    if (!it->is_string()) throw parse_error("case_id must be a string", "case_id");
    c.case_id = it->get<std::string>();
  }
  if (auto it = doc.find("image"); it != doc.end() && !it->is_null()) {
    if (!it->is_string()) throw parse_error("image must be a string", "image");
    c.image = it->get<std::string>();
  }
  if (auto it = doc.find("image_size_px"); it != doc.end() && !it->is_null()) {
    const auto p = parse_point(*it, "image_size_px");
    if (p.x <= 0 || p.y <= 0) throw parse_error("image_size_px must be positive", "image_size_px");
    c.image_size_px = std::array<double, 2>{p.x, p.y};
  }
  if (auto it = doc.find("orientation"); it != doc.end() && !it->is_null()) {
    c.landmarks.orientation = parse_orientation(*it);
  }

  auto cal = doc.find("calibration_mm_per_px");
  if (cal == doc.end() || cal->is_null()) {
    Error e(ErrorCode::MissingCalibration, "calibration_mm_per_px is required");
    e.field = "calibration_mm_per_px";
    throw e;
  }
  if (!cal->is_number()) throw parse_error("calibration_mm_per_px must be a number", "calibration_mm_per_px");
  try {
    c.landmarks.calibration = Calibration(cal->get<double>());
  } catch (const Error& e) {
    throw parse_error(e.what(), "calibration_mm_per_px");
  }

  auto lm = doc.find("landmarks");
  if (lm == doc.end() || !lm->is_object()) throw parse_error("landmarks object is required", "landmarks");
  for (const auto& [name, value] : lm->items()) {
    insert_point(c.landmarks, name, parse_point(value, "landmarks." + name), std::nullopt);
  }
  return c;
}

CaseFile parse_landmarks_ordered_txt(std::string_view bytes, const OrderProfile& profile,
                                     std::optional<double> mm_per_px, std::string source_path) {
  CaseFile c;
  c.source_path = std::move(source_path);
  c.landmarks.calibration = Calibration(mm_per_px.value_or(profile.default_mm_per_px));

  std::size_t line_no = 0;
  std::size_t index = 0;
  std::string_view rest = bytes;
  while (!rest.empty()) {
    ++line_no;
    const auto nl = rest.find('\n');
    std::string_view line = trim(rest.substr(0, nl));
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    std::optional<double> x, y;
    if (comma != std::string_view::npos) {
      x = parse_double(line.substr(0, comma));
      y = parse_double(line.substr(comma + 1));
    }
    if (!x || !y) {
      throw parse_error("line " + std::to_string(line_no) + ": expected x,y but got \"" + std::string(line) + "\"",
                        std::nullopt, line_no);
    }
    if (index >= profile.order.size()) {
      throw parse_error("line " + std::to_string(line_no) + ": more coordinate lines than the " + profile.name +
                            " profile defines",
                        std::nullopt, line_no);
    }
    c.landmarks.points.emplace(profile.order[index++], Point2{*x, *y});
  }
  if (index < profile.order.size()) {
    Error e(ErrorCode::MissingLandmark, "expected " + std::to_string(profile.order.size()) + " coordinate lines, got " +
                                            std::to_string(index));
    throw e;
  }
  return c;
}

CaseFile parse_landmarks_csv(std::string_view bytes, std::optional<double> mm_per_px, std::string source_path) {
  CaseFile c;
  c.source_path = std::move(source_path);
  std::optional<double> declared;
  bool header_seen = false;

  std::size_t line_no = 0;
  std::string_view rest = bytes;
  while (!rest.empty()) {
    ++line_no;
    const auto nl = rest.find('\n');
    std::string_view line = trim(rest.substr(0, nl));
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      // "# key: value" metadata
      auto body = trim(line.substr(1));
      const auto colon = body.find(':');
      if (colon == std::string_view::npos) continue;
      const auto key = trim(body.substr(0, colon));
      const auto value = trim(body.substr(colon + 1));
      if (key == "calibration_mm_per_px") {
        declared = parse_double(value);
        if (!declared) throw parse_error("bad calibration value", "calibration_mm_per_px", line_no);
      } else if (key == "case_id") {
        c.case_id = std::string(value);
      } else if (key == "image") {
        c.image = std::string(value);
      }
      continue;
    }
    if (!header_seen) {
      std::string h;
      for (char ch : line) {
        if (ch != ' ') h += ch;
      }
      if (h != "landmark,x,y") throw parse_error("expected header landmark,x,y", std::nullopt, line_no);
      header_seen = true;
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos) {
      throw parse_error("line " + std::to_string(line_no) + ": expected landmark,x,y", std::nullopt, line_no);
    }
    const auto name = trim(line.substr(0, c1));
    const auto x = parse_double(line.substr(c1 + 1, c2 - c1 - 1));
    const auto y = parse_double(line.substr(c2 + 1));
    if (!x || !y) throw parse_error("line " + std::to_string(line_no) + ": bad coordinate", std::nullopt, line_no);
    insert_point(c.landmarks, name, {*x, *y}, line_no);
  }
  if (!header_seen) throw parse_error("missing header landmark,x,y");
  try {
    c.landmarks.calibration = Calibration(mm_per_px.value_or(declared.value_or(isbi19_profile().default_mm_per_px)));
  } catch (const Error& e) {
    throw parse_error(e.what(), "calibration_mm_per_px");
  }
  return c;
}

std::string write_landmarks_json(const CaseFile& c) {
  std::string out = "{\n";
  if (c.case_id) out += "  \"case_id\": " + json(*c.case_id).dump(-1, ' ', false, json::error_handler_t::replace) + ",\n";
  if (c.image) out += "  \"image\": " + json(*c.image).dump(-1, ' ', false, json::error_handler_t::replace) + ",\n";
  if (c.image_size_px) {
    out += "  \"image_size_px\": [" + shortest((*c.image_size_px)[0]) + ", " + shortest((*c.image_size_px)[1]) + "],\n";
  }
  if (c.landmarks.calibration) {
    out += "  \"calibration_mm_per_px\": " + shortest(c.landmarks.calibration->mm_per_px()) + ",\n";
  }
  out += "  \"orientation\": \"" + std::string(orientation_name(c.landmarks.orientation)) + "\",\n";
  out += "  \"landmarks\": {";
  const auto pts = sorted_points(c.landmarks);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out += i ? ",\n" : "\n";
    out += "    \"" + std::string(pts[i].first) + "\": [" + fixed6(pts[i].second.x) + ", " + fixed6(pts[i].second.y) + "]";
  }
  out += pts.empty() ? "}\n" : "\n  }\n";
  out += "}\n";
  return out;
}

std::string write_landmarks_csv(const CaseFile& c) {
  std::string out;
  if (c.case_id) out += "# case_id: " + *c.case_id + "\n";
  if (c.image) out += "# image: " + *c.image + "\n";
  if (c.landmarks.calibration) out += "# calibration_mm_per_px: " + shortest(c.landmarks.calibration->mm_per_px()) + "\n";
  out += "landmark,x,y\n";
  for (const auto& [name, p] : sorted_points(c.landmarks)) {
    out += std::string(name) + "," + fixed6(p.x) + "," + fixed6(p.y) + "\n";
  }
  return out;
}

std::string write_landmarks_ordered_txt(const CaseFile& c, const OrderProfile& profile) {
  std::string out;
  for (L id : profile.order) {
    if (!c.landmarks.has(id)) {
      throw Error(ErrorCode::MissingLandmark, "profile " + profile.name + " needs landmark " +
                                                  std::string(landmark_name(id)));
    }
    const auto& p = c.landmarks.at(id);
    out += fixed6(p.x) + "," + fixed6(p.y) + "\n";
  }
  return out;
}

CaseFile load_case_file(const std::string& path, std::optional<LandmarkFormat> format,
                        std::optional<double> mm_per_px) {
  const auto fmt = format ? format : detect_landmark_format(path);
  if (!fmt) throw parse_error("unrecognized landmark file extension: " + path);
  const std::string bytes = read_file(path);
  switch (*fmt) {
    case LandmarkFormat::Json: {
      auto c = parse_landmarks_json(bytes, path);
      if (mm_per_px) c.landmarks.calibration = Calibration(*mm_per_px);
      return c;
    }
    case LandmarkFormat::Isbi19: return parse_landmarks_ordered_txt(bytes, isbi19_profile(), mm_per_px, path);
    case LandmarkFormat::Csv: return parse_landmarks_csv(bytes, mm_per_px, path);
  }
  throw parse_error("unsupported format");
}

NormTable load_norms(std::string_view bytes) {
  NormTable t;
  std::vector<std::string> provenance;
  std::set<MeasurementId> seen;
  std::size_t line_no = 0;
  std::string_view rest = bytes;
  while (!rest.empty()) {
    ++line_no;
    const auto nl = rest.find('\n');
    std::string_view line = trim(rest.substr(0, nl));
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      auto body = trim(line.substr(1));
      constexpr std::string_view tag = "provenance:";
      if (body.starts_with(tag)) provenance.emplace_back(trim(body.substr(tag.size())));
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (pos < line.size()) {
      const auto b = line.find_first_not_of(" \t", pos);
      if (b == std::string_view::npos) break;
      const auto e = line.find_first_of(" \t", b);
      fields.push_back(line.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b));
      pos = e == std::string_view::npos ? line.size() : e;
    }
    const auto where = "line " + std::to_string(line_no) + ": ";
    if (fields.size() != 3) throw parse_error(where + "expected ID MEAN SD", std::nullopt, line_no);
    const auto id = measurement_from_name(fields[0]);
    if (!id) throw parse_error(where + "unknown measurement " + std::string(fields[0]), std::nullopt, line_no);
    if (!seen.insert(*id).second) {
      throw parse_error(where + "duplicate measurement " + std::string(fields[0]), std::nullopt, line_no);
    }
    const auto mean = parse_double(fields[1]);
    const auto sd = parse_double(fields[2]);
    if (!mean || !sd) throw parse_error(where + "MEAN and SD must be numbers", std::nullopt, line_no);
    try {
      t.set(*id, {*mean, *sd});
    } catch (Error& e) {
      e.line = line_no;
      throw;
    }
  }
  for (std::size_t i = 0; i < provenance.size(); ++i) {
    if (i) t.provenance += " ";
    t.provenance += provenance[i];
  }
  return t;
}

Thresholds load_thresholds(std::string_view bytes) {
  Thresholds t;
  std::size_t line_no = 0;
  std::string_view rest = bytes;
  while (!rest.empty()) {
    ++line_no;
    const auto nl = rest.find('\n');
    std::string_view line = trim(rest.substr(0, nl));
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (line.empty() || line.front() == '#') continue;
    const auto sep = line.find_first_of(" \t=:");
    if (sep == std::string_view::npos) throw parse_error("line " + std::to_string(line_no) + ": expected key value");
    const auto key = trim(line.substr(0, sep));
    auto value_text = trim(line.substr(sep + 1));
    if (!value_text.empty() && (value_text.front() == '=' || value_text.front() == ':')) {
      value_text = trim(value_text.substr(1));
    }
    const auto value = parse_double(value_text);
    if (!value) throw parse_error("line " + std::to_string(line_no) + ": bad number", std::string(key), line_no);
    if (key == "anb_lo") {
      t.anb_lo = *value;
    } else if (key == "anb_hi") {
      t.anb_hi = *value;
    } else if (key == "mpfh_lo") {
      t.mpfh_lo = *value;
    } else if (key == "mpfh_hi") {
      t.mpfh_hi = *value;
    } else {
      throw parse_error("line " + std::to_string(line_no) + ": unknown key " + std::string(key), std::string(key),
                        line_no);
    }
  }
  if (t.anb_lo > t.anb_hi || t.mpfh_lo > t.mpfh_hi) throw parse_error("lower threshold exceeds upper threshold");
  return t;
}

const NormTable& default_norms() {
  static const NormTable t = load_norms(embedded::norms());
  return t;
}

Thresholds default_thresholds() {
  static const Thresholds t = load_thresholds(embedded::thresholds());
  return t;
}

}  // namespace cephkit
