#pragma once

#include <stdexcept>
#include <string>

namespace specalign {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Wrong modality for a stem, or a modality index outside {0,1,2,3}.
class RoutingError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

/// An embedding row whose norm is too small to normalize.
class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

class QueueEmptyError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or version-mismatched serialized state.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace specalign
