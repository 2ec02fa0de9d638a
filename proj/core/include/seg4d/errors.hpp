#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace seg4d {

/// Broad failure class. Maps onto the CLI exit codes.
enum class ErrorKind {
  kConfig,      // bad configuration or invalid parameters
  kData,        // malformed or inconsistent input data
  kSegmenter,   // segmenter process failures, protocol violations
  kSession,     // interactive session errors
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

/// A binary file whose layout is wrong. Carries the offending byte offset.
struct FormatError : DataError {
  FormatError(const std::string& what, std::uint64_t offset)
      : DataError(what + " (byte offset " + std::to_string(offset) + ")"), offset(offset) {}
  std::uint64_t offset;
};

/// A text file that failed to parse. Carries the 1-based line number.
struct ParseError : DataError {
  ParseError(const std::string& what, std::size_t line)
      : DataError(what + " (line " + std::to_string(line) + ")"), line(line) {}
  std::size_t line;
};

/// Caller-supplied arguments violate an operation's contract.
struct InputError : DataError {
  explicit InputError(const std::string& what) : DataError(what) {}
};

struct PreconditionError : DataError {
  explicit PreconditionError(const std::string& what) : DataError(what) {}
};

struct SegmenterError : Error {
  explicit SegmenterError(const std::string& what) : Error(ErrorKind::kSegmenter, what) {}
};

struct HandshakeError : SegmenterError {
  explicit HandshakeError(const std::string& what) : SegmenterError(what) {}
};

struct SessionError : Error {
  explicit SessionError(const std::string& what) : Error(ErrorKind::kSession, what) {}
};

/// Process exit code for an error: 2 config, 3 data, 4 segmenter.
inline int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kData:
    case ErrorKind::kSession:
      return 3;
    case ErrorKind::kSegmenter:
      return 4;
  }
  return 1;
}

}  // namespace seg4d
