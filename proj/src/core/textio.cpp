#include "core/textio.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "core/error.hpp"

namespace harvsim::textio {

std::string sci9(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::scientific, 8);
  return std::string(buf, res.ptr);
}

std::string int_str(std::int64_t value) {
  char buf[24];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& token, const std::string& what) {
  const std::string t = trim(token);
  if (t.empty()) fail(errc::parse, what + ": empty numeric value");
  double out = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    fail(errc::parse, what + ": cannot parse '" + t + "' as a number");
  return out;
}

std::int64_t parse_int(const std::string& token, const std::string& what) {
  const std::string t = trim(token);
  if (t.empty()) fail(errc::parse, what + ": empty integer value");
  std::int64_t out = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    fail(errc::parse, what + ": cannot parse '" + t + "' as an integer");
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(errc::io, "read failure on '" + path + "'");
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(errc::io, "cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  if (!out) fail(errc::io, "write failure on '" + path + "'");
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace harvsim::textio
