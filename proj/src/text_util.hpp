#pragma once

#include "cephkit/error.hpp"

#include <cstddef>
#include <string>
#include <string_view>

namespace cephkit {

// Throws Error(Io).
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

std::string_view trim(std::string_view s);

// Calls fn(line_no, key, value) for every `key<TAB>value` line, skipping
// blank lines and lines starting with '#'. Throws Error(ParseError) on a line
// without a tab.
template <typename Fn>
void for_each_record(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected key<TAB>value");
    }
    fn(line_no, line.substr(0, tab), line.substr(tab + 1));
  }
}

}  // namespace cephkit
