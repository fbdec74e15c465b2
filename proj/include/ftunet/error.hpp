#pragma once

#include <stdexcept>
#include <string>

namespace ftunet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid architecture or run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Graph topology or tensor shapes do not match what an operation expects.
struct StructuralError : Error {
  using Error::Error;
};

struct ArgumentError : Error {
  using Error::Error;
};

// Missing or unreadable dataset files.
struct IngestionError : Error {
  using Error::Error;
};

// Undecodable image data.
struct FormatError : Error {
  using Error::Error;
};

// Corrupt or truncated checkpoint archive.
struct IntegrityError : Error {
  using Error::Error;
};

// Checkpoint written for a different architecture.
struct IncompatibleCheckpointError : Error {
  using Error::Error;
};

}  // namespace ftunet
