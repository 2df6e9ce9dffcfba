#include "fbi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace fbi {

Shape::Shape(std::initializer_list<std::size_t> dims)
    : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.empty() || dims_.size() > kMaxRank) {
    throw ShapeError("shape rank must be between 1 and 4, got " +
                     std::to_string(dims_.size()));
  }
  std::size_t count = 1;
  for (std::size_t d : dims_) {
    if (d == 0) {
      throw ShapeError("shape extents must be positive: " + to_string());
    }
    if (count > std::numeric_limits<std::size_t>::max() / d) {
      throw ShapeError("shape element count overflows: " + to_string());
    }
    count *= d;
  }
}

std::size_t Shape::size() const {
  if (dims_.empty()) return 0;
  std::size_t count = 1;
  for (std::size_t d : dims_) count *= d;
  return count;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i != 0) os << ',';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_.size(), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor of shape " + shape_.to_string() + " needs " +
                     std::to_string(shape_.size()) + " values, got " +
                     std::to_string(data_.size()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw Error("non-finite tensor value at flat index " + std::to_string(i));
    }
  }
}

Tensor Tensor::filled(Shape shape, float value) {
  const std::size_t n = shape.size();
  return Tensor(std::move(shape), std::vector<float>(n, value));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.size() != data_.size()) {
    throw ShapeError("cannot reshape " + shape_.to_string() + " to " +
                     shape.to_string());
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

std::size_t Tensor::count_nonzero() const {
  return static_cast<std::size_t>(
      std::count_if(data_.begin(), data_.end(), [](float v) { return v != 0.0f; }));
}

std::size_t output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t pad) {
  if (kernel == 0 || stride == 0) {
    throw ShapeError("kernel and stride must be at least 1");
  }
  const std::size_t padded = in + 2 * pad;
  if (padded < kernel) {
    throw ShapeError("kernel " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(padded));
  }
  if ((padded - kernel) % stride != 0) {
    throw ShapeError("non-integral output extent: (" + std::to_string(in) + " + 2*" +
                     std::to_string(pad) + " - " + std::to_string(kernel) + ") / " +
                     std::to_string(stride));
  }
  return (padded - kernel) / stride + 1;
}

void check_geometry(const ConvGeometry& geom) {
  if (geom.kernel.h == 0 || geom.kernel.w == 0 || geom.stride.h == 0 ||
      geom.stride.w == 0) {
    throw ShapeError("kernel and stride extents must be at least 1");
  }
}

Shape conv_output_shape(const Shape& input, std::size_t out_channels,
                        const ConvGeometry& geom) {
  if (input.rank() != 3) {
    throw ShapeError("convolution input must be [C,H,W], got " + input.to_string());
  }
  check_geometry(geom);
  return Shape{out_channels,
               output_extent(input[1], geom.kernel.h, geom.stride.h, geom.padding.h),
               output_extent(input[2], geom.kernel.w, geom.stride.w, geom.padding.w)};
}

Shape pool_output_shape(const Shape& input, const PoolGeometry& geom) {
  if (input.rank() != 3) {
    throw ShapeError("pooling input must be [C,H,W], got " + input.to_string());
  }
  return Shape{input[0], output_extent(input[1], geom.kernel.h, geom.stride.h, 0),
               output_extent(input[2], geom.kernel.w, geom.stride.w, 0)};
}

}  // namespace fbi
