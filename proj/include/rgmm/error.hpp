#pragma once

#include <stdexcept>
#include <string>

namespace rgmm {

/// Failure categories. The CLI maps each one to its own exit status.
enum class ErrorCode {
  InvalidArgument = 3,
  InvalidConfig = 4,
  Io = 5,
  MalformedFile = 6,
  DimensionMismatch = 7,
  InvalidData = 8,
  EmptyInput = 9,
  FitFailed = 10,
  Numerical = 11,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rgmm
