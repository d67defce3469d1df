#pragma once

#include <string_view>

// Contents of data/ compiled into the library (generated at configure time).
namespace cephkit::embedded {

std::string_view norms();
std::string_view thresholds();
std::string_view templates_en();
std::string_view templates_zh();
std::string_view instructions_en();
std::string_view instructions_zh();
std::string_view synonyms();

}  // namespace cephkit::embedded
