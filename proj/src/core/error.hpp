#pragma once

#include <stdexcept>
#include <string>

namespace harvsim {

// Broad failure classes; the C API maps these one-to-one onto status codes
// and the CLI onto exit codes (config/validation/parse -> 2, numeric/io -> 3).
enum class errc {
  invalid_argument,
  parse,
  validation,
  numeric,
  io,
};

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

}  // namespace harvsim
