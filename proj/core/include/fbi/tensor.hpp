#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbi {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not compose (mismatched extents, non-integral geometry).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary payload (weight archive, image raster).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Malformed architecture text.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Architecture and weights do not agree.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Extents of a dense tensor, rank 1 to 4, every extent at least 1.
///
/// A default-constructed Shape is the empty (rank 0) placeholder used by
/// not-yet-populated records; it has element count 0.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::span<const std::size_t> dims() const { return dims_; }
  std::size_t size() const;
  bool empty() const { return dims_.empty(); }

  std::string to_string() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

/// Dense float32 tensor in row-major order (last axis fastest).
///
/// Feature maps are stored as [C, H, W]; the batch extent is implicitly 1.
/// Constructors reject non-finite values.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor filled(Shape shape, float value);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  float& at(std::size_t o, std::size_t i, std::size_t u, std::size_t v) {
    return data_[((o * shape_[1] + i) * shape_[2] + u) * shape_[3] + v];
  }
  float at(std::size_t o, std::size_t i, std::size_t u, std::size_t v) const {
    return data_[((o * shape_[1] + i) * shape_[2] + u) * shape_[3] + v];
  }

  /// Same values under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  std::size_t count_nonzero() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Row/column pair used for kernel, stride and padding extents.
struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;

  friend bool operator==(const Extent2&, const Extent2&) = default;
};

/// Convolution geometry with symmetric zero padding.
struct ConvGeometry {
  Extent2 kernel{1, 1};
  Extent2 stride{1, 1};
  Extent2 padding{0, 0};

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// Pooling window; pooling never pads.
struct PoolGeometry {
  Extent2 kernel{2, 2};
  Extent2 stride{2, 2};

  friend bool operator==(const PoolGeometry&, const PoolGeometry&) = default;
};

/// (in + 2*pad - kernel) / stride + 1, or ShapeError when that is not a
/// positive integer.
std::size_t output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t pad);

/// Output [C_out, H', W'] of a convolution over [C_in, H, W].
Shape conv_output_shape(const Shape& input, std::size_t out_channels,
                        const ConvGeometry& geom);

Shape pool_output_shape(const Shape& input, const PoolGeometry& geom);

void check_geometry(const ConvGeometry& geom);

}  // namespace fbi
