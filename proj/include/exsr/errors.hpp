#pragma once

#include <stdexcept>
#include <string>

namespace exsr {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration is internally inconsistent or does not match a checkpoint.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor ranks or extents do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An external model (feature extractor, TorchScript module) failed.
class DependencyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Dataset content cannot satisfy the request (empty index, too few images).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A client request is malformed. Maps to HTTP 400.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A referenced gallery entry does not exist. Maps to HTTP 404.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& what, std::string snapshot_path)
      : Error(what), snapshot_path_(std::move(snapshot_path)) {}

  /// Path of the diagnostic checkpoint written before raising, empty if none.
  const std::string& snapshot_path() const noexcept { return snapshot_path_; }

 private:
  std::string snapshot_path_;
};

}  // namespace exsr
