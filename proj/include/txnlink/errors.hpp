#pragma once

#include <stdexcept>
#include <string>

namespace txnlink {

/// Broad failure classes. The CLI maps each one onto a process exit code.
enum class ErrorKind {
  usage,      // bad arguments, misuse of an API
  config,     // invalid configuration values
  data,       // malformed or inconsistent input data
  numerical,  // non-finite values, divergence
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::usage, "dimension error: " + w) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(ErrorKind::usage, "usage error: " + w) {}
};
struct BatchSizeError : Error {
  explicit BatchSizeError(const std::string& w) : Error(ErrorKind::usage, "batch-size error: " + w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, "config error: " + w) {}
};
struct IngestionError : Error {
  explicit IngestionError(const std::string& w) : Error(ErrorKind::data, "ingestion error: " + w) {}
};
struct SamplingError : Error {
  explicit SamplingError(const std::string& w) : Error(ErrorKind::data, "sampling error: " + w) {}
};
struct LookupError : Error {
  explicit LookupError(const std::string& w) : Error(ErrorKind::data, "lookup error: " + w) {}
};
struct ModelError : Error {
  explicit ModelError(const std::string& w) : Error(ErrorKind::data, "model error: " + w) {}
};
struct MetricError : Error {
  explicit MetricError(const std::string& w) : Error(ErrorKind::data, "metric error: " + w) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorKind::numerical, "numerical error: " + w) {}
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::config: return 1;
    case ErrorKind::data: return 2;
    case ErrorKind::numerical: return 3;
  }
  return 1;
}

}  // namespace txnlink
