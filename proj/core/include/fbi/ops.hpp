#pragma once

#include <cstddef>
#include <vector>

#include "fbi/tensor.hpp"

namespace fbi {

// Every reduction below has a fixed summation order, so repeated calls on the
// same operands are bit-identical.

/// Direct 2-D convolution (cross-correlation) with zero padding.
///
/// out[o,y,x] = (sum over i, then u, then v of in[i, y*sh+u-ph, x*sw+v-pw] *
/// w[o,i,u,v]) + bias[o]. Out-of-range reads contribute nothing.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvGeometry& geom);

/// Exact adjoint of the bias-free conv2d map: every backward entry is
/// scattered through its receptive field, which is a convolution with the
/// spatially flipped, channel-transposed filters. Accumulation order per
/// output entry is (o, u, v).
Tensor conv2d_transpose_flipped(const Tensor& backward, const Tensor& weight,
                                const ConvGeometry& geom, const Shape& out_shape);

/// Per-window argmax, stored as the flat h*W+w index inside the channel
/// plane of the pooled input.
struct Switches {
  Shape shape;
  std::vector<std::size_t> index;

  friend bool operator==(const Switches&, const Switches&) = default;
};

struct MaxPoolResult {
  Tensor pooled;
  Switches switches;
};

/// Max pooling without padding. Ties go to the first maximal entry in
/// row-major window order.
MaxPoolResult maxpool2d(const Tensor& input, const PoolGeometry& geom);

/// W x + b for W [out,in]; each row is summed in input-index order.
Tensor affine(const Tensor& weight, const Tensor& bias, const Tensor& x);

/// W^T y for W [out,in]; each column is summed in output-index order.
Tensor affine_transpose(const Tensor& weight, const Tensor& y);

Tensor relu(const Tensor& x);

/// Max-shifted softmax over a rank-1 tensor.
Tensor softmax(const Tensor& x);

/// Elementwise a - b for equal shapes.
Tensor subtract(const Tensor& a, const Tensor& b);

}  // namespace fbi
