#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace fedcast {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Flat buffer aligned like Eigen's own heap storage. Vectorized reductions
/// over a Map peel a misaligned prefix, so the summation order (and the last
/// bits of the result) would otherwise depend on where the allocator put the
/// buffer.
using AlignedBuffer = std::vector<double, Eigen::aligned_allocator<double>>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class FileNotFound : public Error {
 public:
  using Error::Error;
};

class HeaderMismatch : public Error {
 public:
  using Error::Error;
};

class NonMonotoneTimestamps : public Error {
 public:
  using Error::Error;
};

class CorruptBuffer : public Error {
 public:
  using Error::Error;
};

/// Configuration validation failure; `path()` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& message)
      : Error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace fedcast
