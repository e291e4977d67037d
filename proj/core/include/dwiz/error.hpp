#pragma once

#include <stdexcept>
#include <string>

namespace dwiz {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corpus ingest failures: missing directory, malformed CSV rows, unknown tags.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape or index mismatch inside the numerical engine.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value reached the optimizer or the loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Bad argument or precondition violation in a public operation.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Model file problems. The kind lets callers tell them apart.
class ModelFormatError : public Error {
 public:
  enum class Kind { Io, BadMagic, Version, Checksum, Truncated, Malformed };

  ModelFormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace dwiz
