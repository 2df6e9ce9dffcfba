#include "fbi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace fbi {
namespace {

using Index = std::int64_t;

// Range [lo, hi) of output rows y with 0 <= y*stride + offset - pad < in.
struct Span1 {
  Index lo;
  Index hi;
};

Span1 valid_outputs(Index in, Index out, Index stride, Index offset, Index pad) {
  // y*stride >= pad - offset
  Index lo = 0;
  const Index need = pad - offset;
  if (need > 0) lo = (need + stride - 1) / stride;
  // y*stride <= in - 1 + pad - offset
  const Index top = in - 1 + pad - offset;
  Index hi = top < 0 ? 0 : top / stride + 1;
  hi = std::min(hi, out);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

void check_conv_operands(const Shape& input, const Tensor& weight,
                         const ConvGeometry& geom) {
  require(weight.shape().rank() == 4,
          "conv weight must be [C_out,C_in,kh,kw], got " + weight.shape().to_string());
  require(input.rank() == 3, "conv input must be [C,H,W], got " + input.to_string());
  require(weight.shape()[1] == input[0],
          "conv weight " + weight.shape().to_string() + " expects " +
              std::to_string(weight.shape()[1]) + " input channels, input has " +
              std::to_string(input[0]));
  require(weight.shape()[2] == geom.kernel.h && weight.shape()[3] == geom.kernel.w,
          "conv weight " + weight.shape().to_string() + " disagrees with kernel " +
              std::to_string(geom.kernel.h) + "x" + std::to_string(geom.kernel.w));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvGeometry& geom) {
  check_conv_operands(input.shape(), weight, geom);
  const std::size_t cout = weight.shape()[0];
  require(bias.shape() == Shape{cout},
          "conv bias must be [" + std::to_string(cout) + "], got " +
              bias.shape().to_string());
  const Shape out_shape = conv_output_shape(input.shape(), cout, geom);

  const Index cin = static_cast<Index>(input.shape()[0]);
  const Index h = static_cast<Index>(input.shape()[1]);
  const Index w = static_cast<Index>(input.shape()[2]);
  const Index ho = static_cast<Index>(out_shape[1]);
  const Index wo = static_cast<Index>(out_shape[2]);
  const Index kh = static_cast<Index>(geom.kernel.h);
  const Index kw = static_cast<Index>(geom.kernel.w);
  const Index sh = static_cast<Index>(geom.stride.h);
  const Index sw = static_cast<Index>(geom.stride.w);
  const Index ph = static_cast<Index>(geom.padding.h);
  const Index pw = static_cast<Index>(geom.padding.w);

  Tensor out(out_shape);
  const float* in = input.data().data();
  const float* wt = weight.data().data();
  float* dst = out.data().data();

  // Each output plane is accumulated with (i, u, v) as the outer loops, so
  // every output entry sees its terms in exactly that order.
  for (Index o = 0; o < static_cast<Index>(cout); ++o) {
    float* plane = dst + o * ho * wo;
    for (Index i = 0; i < cin; ++i) {
      const float* src = in + i * h * w;
      for (Index u = 0; u < kh; ++u) {
        const Span1 ys = valid_outputs(h, ho, sh, u, ph);
        for (Index v = 0; v < kw; ++v) {
          const float k = wt[((o * cin + i) * kh + u) * kw + v];
          const Span1 xs = valid_outputs(w, wo, sw, v, pw);
          for (Index y = ys.lo; y < ys.hi; ++y) {
            const float* row = src + (y * sh + u - ph) * w;
            float* acc = plane + y * wo;
            if (sw == 1) {
              const Index shift = v - pw;
              for (Index x = xs.lo; x < xs.hi; ++x) acc[x] += row[x + shift] * k;
            } else {
              for (Index x = xs.lo; x < xs.hi; ++x) acc[x] += row[x * sw + v - pw] * k;
            }
          }
        }
      }
    }
    const float b = bias[static_cast<std::size_t>(o)];
    for (Index p = 0; p < ho * wo; ++p) plane[p] += b;
  }
  return out;
}

Tensor conv2d_transpose_flipped(const Tensor& backward, const Tensor& weight,
                                const ConvGeometry& geom, const Shape& out_shape) {
  check_conv_operands(out_shape, weight, geom);
  const Shape expected = conv_output_shape(out_shape, weight.shape()[0], geom);
  require(backward.shape() == expected,
          "backward signal " + backward.shape().to_string() + " does not match conv output " +
              expected.to_string() + " for input " + out_shape.to_string());

  const Index cout = static_cast<Index>(weight.shape()[0]);
  const Index cin = static_cast<Index>(out_shape[0]);
  const Index h = static_cast<Index>(out_shape[1]);
  const Index w = static_cast<Index>(out_shape[2]);
  const Index ho = static_cast<Index>(expected[1]);
  const Index wo = static_cast<Index>(expected[2]);
  const Index kh = static_cast<Index>(geom.kernel.h);
  const Index kw = static_cast<Index>(geom.kernel.w);
  const Index sh = static_cast<Index>(geom.stride.h);
  const Index sw = static_cast<Index>(geom.stride.w);
  const Index ph = static_cast<Index>(geom.padding.h);
  const Index pw = static_cast<Index>(geom.padding.w);

  Tensor out(out_shape);
  const float* g = backward.data().data();
  const float* wt = weight.data().data();
  float* dst = out.data().data();

  for (Index o = 0; o < cout; ++o) {
    const float* gplane = g + o * ho * wo;
    for (Index i = 0; i < cin; ++i) {
      float* plane = dst + i * h * w;
      for (Index u = 0; u < kh; ++u) {
        const Span1 ys = valid_outputs(h, ho, sh, u, ph);
        for (Index v = 0; v < kw; ++v) {
          const float k = wt[((o * cin + i) * kh + u) * kw + v];
          const Span1 xs = valid_outputs(w, wo, sw, v, pw);
          for (Index y = ys.lo; y < ys.hi; ++y) {
            float* row = plane + (y * sh + u - ph) * w;
            const float* grow = gplane + y * wo;
            if (sw == 1) {
              const Index shift = v - pw;
              for (Index x = xs.lo; x < xs.hi; ++x) row[x + shift] += grow[x] * k;
            } else {
              for (Index x = xs.lo; x < xs.hi; ++x) row[x * sw + v - pw] += grow[x] * k;
            }
          }
        }
      }
    }
  }
  return out;
}

MaxPoolResult maxpool2d(const Tensor& input, const PoolGeometry& geom) {
  const Shape out_shape = pool_output_shape(input.shape(), geom);
  const std::size_t c = input.shape()[0];
  const std::size_t w = input.shape()[2];
  const std::size_t ho = out_shape[1];
  const std::size_t wo = out_shape[2];

  MaxPoolResult result{Tensor(out_shape), Switches{out_shape, {}}};
  result.switches.index.resize(out_shape.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        const std::size_t y0 = y * geom.stride.h;
        const std::size_t x0 = x * geom.stride.w;
        std::size_t best = y0 * w + x0;
        float best_value = input.at(ch, y0, x0);
        for (std::size_t u = 0; u < geom.kernel.h; ++u) {
          for (std::size_t v = 0; v < geom.kernel.w; ++v) {
            const float value = input.at(ch, y0 + u, x0 + v);
            if (value > best_value) {
              best_value = value;
              best = (y0 + u) * w + (x0 + v);
            }
          }
        }
        result.pooled.at(ch, y, x) = best_value;
        result.switches.index[(ch * ho + y) * wo + x] = best;
      }
    }
  }
  return result;
}

Tensor affine(const Tensor& weight, const Tensor& bias, const Tensor& x) {
  require(weight.shape().rank() == 2,
          "dense weight must be [out,in], got " + weight.shape().to_string());
  const std::size_t rows = weight.shape()[0];
  const std::size_t cols = weight.shape()[1];
  require(x.shape() == Shape{cols}, "dense input must be [" + std::to_string(cols) +
                                        "], got " + x.shape().to_string());
  require(bias.shape() == Shape{rows}, "dense bias must be [" + std::to_string(rows) +
                                           "], got " + bias.shape().to_string());
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    float acc = 0.0f;
    const float* row = weight.data().data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
    out[r] = acc + bias[r];
  }
  return out;
}

Tensor affine_transpose(const Tensor& weight, const Tensor& y) {
  require(weight.shape().rank() == 2,
          "dense weight must be [out,in], got " + weight.shape().to_string());
  const std::size_t rows = weight.shape()[0];
  const std::size_t cols = weight.shape()[1];
  require(y.shape() == Shape{rows}, "dense backward signal must be [" +
                                        std::to_string(rows) + "], got " +
                                        y.shape().to_string());
  Tensor out(Shape{cols});
  float* dst = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float g = y[r];
    const float* row = weight.data().data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) dst[j] += row[j] * g;
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor softmax(const Tensor& x) {
  require(x.shape().rank() == 1 && x.size() >= 1,
          "softmax needs a non-empty vector, got " + x.shape().to_string());
  const float peak = *std::max_element(x.data().begin(), x.data().end());
  Tensor out(x.shape());
  float total = 0.0f;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - peak);
    total += out[i];
  }
  for (float& v : out.data()) v /= total;
  return out;
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "cannot subtract " + b.shape().to_string() + " from " +
                                      a.shape().to_string());
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

}  // namespace fbi
