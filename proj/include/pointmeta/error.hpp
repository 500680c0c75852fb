#pragma once

#include <stdexcept>
#include <string>

namespace pmeta {

enum class ErrorKind {
  dimension,
  parameter,
  named_parameter,
  numeric,
  format,
  io,
  empty_cloud,
  spec,
  registry,
  config,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so front ends can map
// it onto exit codes without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace pmeta
