#pragma once

#include <stdexcept>
#include <string>

namespace caepl {

// Error taxonomy. The CLI maps each kind to a distinct exit status, so new
// kinds need a row in tools/caepl.cpp as well.
enum class ErrorKind {
  Shape,       // tensor/layer geometry violation
  Param,       // invalid argument value
  Contract,    // API misuse (non-scalar loss, mismatched buffers, ...)
  Config,      // malformed or inconsistent configuration
  Data,        // dataset content problem (unpaired files, bad labels, ...)
  Transfer,    // named weight transfer failure
  Checkpoint,  // checkpoint version/integrity failure
  Score,       // metric undefined (empty confusion matrix, ...)
  Io,          // filesystem failure
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Param: return "param";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Transfer: return "transfer";
    case ErrorKind::Checkpoint: return "checkpoint";
    case ErrorKind::Score: return "score";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error(ErrorKind::Shape, m) {}
};
struct ParamError : Error {
  explicit ParamError(const std::string& m) : Error(ErrorKind::Param, m) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error(ErrorKind::Contract, m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};
struct DataError : Error {
  explicit DataError(const std::string& m) : Error(ErrorKind::Data, m) {}
};
struct TransferError : Error {
  explicit TransferError(const std::string& m) : Error(ErrorKind::Transfer, m) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& m) : Error(ErrorKind::Checkpoint, m) {}
};
struct ScoreError : Error {
  explicit ScoreError(const std::string& m) : Error(ErrorKind::Score, m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrorKind::Io, m) {}
};

}  // namespace caepl
