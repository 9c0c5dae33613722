#pragma once

#include <stdexcept>
#include <string>

namespace fw {

// Error taxonomy. The CLI maps each kind onto an exit code, so new failure
// modes should derive from one of these rather than from std::runtime_error.
enum class ErrorKind {
  kUsage,       // bad flags or arguments
  kParse,       // malformed example/schema/request text
  kContract,    // caller violated a precondition
  kFormat,      // malformed or truncated binary file
  kStaleBase,   // patch applied to the wrong base
  kCorruption,  // patch output failed verification
  kStaleCache,  // context cache built against older weights
  kSizing,      // model would exceed the memory cap
  kIo,          // file or stream failure
  kNumeric,     // non-finite value in a computation
  kWorker,      // a training worker failed
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ErrorKind::kParse, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::kContract, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::kFormat, what) {}
};

class StaleBaseError : public Error {
 public:
  explicit StaleBaseError(const std::string& what) : Error(ErrorKind::kStaleBase, what) {}
};

class CorruptionError : public Error {
 public:
  explicit CorruptionError(const std::string& what) : Error(ErrorKind::kCorruption, what) {}
};

class StaleCacheError : public Error {
 public:
  explicit StaleCacheError(const std::string& what) : Error(ErrorKind::kStaleCache, what) {}
};

class SizingError : public Error {
 public:
  explicit SizingError(const std::string& what) : Error(ErrorKind::kSizing, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

// Carries the block (lr, ffm, nn, merge, ...) or offset where the value appeared.
class NumericError : public Error {
 public:
  NumericError(const std::string& where, const std::string& what)
      : Error(ErrorKind::kNumeric, where + ": " + what), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// `cause` is the kind of the error the worker hit, kWorker if it was not an Error.
class WorkerError : public Error {
 public:
  WorkerError(int worker_id, const std::string& what, ErrorKind cause = ErrorKind::kWorker)
      : Error(ErrorKind::kWorker, "worker " + std::to_string(worker_id) + ": " + what),
        worker_id_(worker_id), cause_(cause) {}
  int worker_id() const noexcept { return worker_id_; }
  ErrorKind cause() const noexcept { return cause_; }

 private:
  int worker_id_;
  ErrorKind cause_;
};

}  // namespace fw
