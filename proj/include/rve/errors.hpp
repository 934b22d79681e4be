#pragma once

#include <stdexcept>
#include <string>

namespace rve {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operands disagree on embedding dimension.
struct DimensionError : Error {
  using Error::Error;
};

// Vector has zero norm or non-finite components where a direction is required.
struct DegenerateVectorError : Error {
  using Error::Error;
};

struct EmptyInputError : Error {
  using Error::Error;
};

// File carries the wrong magic or an unsupported version.
struct FormatError : Error {
  using Error::Error;
};

// File is truncated, fails its checksum, or is internally inconsistent.
struct CorruptFileError : Error {
  using Error::Error;
};

struct DuplicateIdError : Error {
  using Error::Error;
};

struct EmptyIndexError : Error {
  using Error::Error;
};

struct NotFoundError : Error {
  using Error::Error;
};

// No record satisfies the sampling constraint.
struct ExhaustedStoreError : Error {
  using Error::Error;
};

// Malformed structured-text record; message carries the line number.
struct ParseError : Error {
  using Error::Error;
};

// Text-retrieval transport or protocol failure.
struct BackendError : Error {
  using Error::Error;
};

// Token grid cannot be reshaped as required.
struct ShapeError : Error {
  using Error::Error;
};

// Operation violates the index build/freeze lifecycle.
struct StateError : Error {
  using Error::Error;
};

}  // namespace rve
