#pragma once

#include <stdexcept>
#include <string>

namespace hoiopt {

enum class ErrorKind {
  Shape,    // operand shapes do not conform
  Numeric,  // non-finite values, degenerate geometry, diverging solves
  Data,     // bad files, missing inputs, format violations
  Config,   // invalid run configuration
  Logic     // API misuse (e.g. backward on a consumed tape)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_shape(const std::string& msg) {
  throw Error(ErrorKind::Shape, msg);
}
[[noreturn]] inline void fail_numeric(const std::string& msg) {
  throw Error(ErrorKind::Numeric, msg);
}
[[noreturn]] inline void fail_data(const std::string& msg) {
  throw Error(ErrorKind::Data, msg);
}
[[noreturn]] inline void fail_config(const std::string& msg) {
  throw Error(ErrorKind::Config, msg);
}
[[noreturn]] inline void fail_logic(const std::string& msg) {
  throw Error(ErrorKind::Logic, msg);
}

}  // namespace hoiopt
