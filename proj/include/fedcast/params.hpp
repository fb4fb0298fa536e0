#pragma once

#include "fedcast/common.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedcast::nn {

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;

  std::size_t size() const;
  bool operator==(const TensorSpec&) const = default;
};

/// Ordered description of where each model tensor lives in the flat vector.
class Layout {
 public:
  Layout() = default;
  explicit Layout(std::string tag) : tag_(std::move(tag)) {}

  /// Appends a tensor right after the previous one and returns its offset.
  std::size_t add(std::string name, std::vector<std::size_t> shape);

  const std::string& tag() const { return tag_; }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  const TensorSpec& tensor(const std::string& name) const;
  std::size_t total_size() const { return total_; }

  bool operator==(const Layout&) const = default;

 private:
  std::string tag_;
  std::vector<TensorSpec> tensors_;
  std::size_t total_ = 0;
};

/// Flat trainable parameters plus their layout; the unit of aggregation.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(Layout layout);
  ParameterVector(Layout layout, std::vector<double> values);

  const Layout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> tensor(const std::string& name);
  std::span<const double> tensor(const std::string& name) const;

  Eigen::Map<Vector> as_eigen() { return {values_.data(), static_cast<Eigen::Index>(values_.size())}; }
  Eigen::Map<const Vector> as_eigen() const {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }

  /// Same layout, all zeros.
  ParameterVector zeros_like() const { return ParameterVector(layout_); }

  /// Bitwise equality of layouts and values (distinguishes -0.0 from 0.0).
  bool bit_equal(const ParameterVector& other) const;

 private:
  Layout layout_;
  AlignedBuffer values_;
};

/// Throws DimensionMismatch unless both vectors share a layout.
void require_same_layout(const ParameterVector& a, const ParameterVector& b, const char* what);

// Checkpoint encoding:
//   "FCPV" | u32 version | str tag | u32 n_tensors
//   per tensor: str name | u32 rank | u64 dims[rank]
//   u64 n_values | f64 values[n_values]
// where str = u32 length + bytes. All integers and reals little-endian.
std::vector<std::uint8_t> serialize_params(const ParameterVector& params);
/// Decodes a buffer; the embedded layout must equal `expected`.
ParameterVector deserialize_params(std::span<const std::uint8_t> bytes, const Layout& expected);
/// Decodes a buffer using its embedded layout.
ParameterVector deserialize_params(std::span<const std::uint8_t> bytes);

/// Size in bytes of the header written for `layout`.
std::size_t header_bytes(const Layout& layout);
/// Total serialized size: header plus 8 bytes per value.
std::size_t serialized_size(const Layout& layout);

void save_checkpoint(const std::string& path, const ParameterVector& params);
ParameterVector load_checkpoint(const std::string& path);

}  // namespace fedcast::nn
