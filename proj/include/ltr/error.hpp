#pragma once

#include <stdexcept>
#include <string>

namespace ltr {

enum class ErrorCode {
  EmptyInput,
  ParseError,
  InvalidDataset,
  InvalidConfig,
  ShapeMismatch,
  CorruptCheckpoint,
  VersionMismatch,
  RankDeficient,
  UnknownQid,
  IoError,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

}  // namespace ltr
