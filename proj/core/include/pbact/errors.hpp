#pragma once

#include <stdexcept>
#include <string>

namespace pbact {

/// Base class for all library errors. Subclasses name the failure category
/// so callers (and the CLI) can map them to machine-parsable error codes.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}

  /// Short stable identifier, e.g. "dimension-error".
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Shape or structure mismatch between operands.
struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error("dimension-error", what) {}
};

/// Bad values (NaN/Inf at graph boundaries, domain violations, divergence).
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error("numeric-error", what) {}
};

/// Invalid or inconsistent configuration.
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config-error", what) {}
};

/// Misuse of an API (e.g. backward() on a non-scalar root).
struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error("usage-error", what) {}
};

/// A demonstration id has no parametric bias in the table.
struct MissingPbError : Error {
  explicit MissingPbError(const std::string& what) : Error("missing-pb", what) {}
};

/// No opposite-label sample exists to draw a negative PB from.
struct NegativeUnavailableError : Error {
  explicit NegativeUnavailableError(const std::string& what)
      : Error("negative-unavailable", what) {}
};

/// Artifact store inconsistency (missing files, id overlap, bad hash).
struct IntegrityError : Error {
  explicit IntegrityError(const std::string& what) : Error("integrity-error", what) {}
};

/// Filesystem failure.
struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io-error", what) {}
};

}  // namespace pbact
