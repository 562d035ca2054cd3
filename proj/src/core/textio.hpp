#pragma once

#include <cstdint>
#include <string>

namespace harvsim::textio {

// Scientific notation with 9 significant digits, locale independent.
// All numeric output (CSV columns, report values, config echo) goes through
// this one formatter so repeated runs produce byte-identical files.
std::string sci9(double value);

std::string int_str(std::int64_t value);

// Parsing counterparts, also locale independent. Both require the whole
// token to be consumed. parse_double accepts inf/-inf (used for thresholds
// that disable the switch).
double parse_double(const std::string& token, const std::string& what);
std::int64_t parse_int(const std::string& token, const std::string& what);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Whitespace trim helper shared by the config and table parsers.
std::string trim(const std::string& s);

}  // namespace harvsim::textio
