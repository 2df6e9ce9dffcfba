#include "fbi/fbi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fbi/ops.hpp"

namespace fbi {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + a.shape().to_string() + " and " +
                     b.shape().to_string() + " differ");
  }
}

}  // namespace

void FbiConfig::check() const {
  if (!(tau >= 0.0f)) throw Error("tau must be non-negative");
  if (!(top_fraction > 0.0f && top_fraction <= 1.0f)) {
    throw Error("top fraction must lie in (0, 1]");
  }
}

Tensor softmax_adjoint(const Tensor& logits, std::size_t class_index) {
  if (logits.shape().rank() != 1) {
    throw ShapeError("softmax adjoint needs a vector, got " + logits.shape().to_string());
  }
  if (class_index >= logits.size()) {
    throw Error("class index " + std::to_string(class_index) + " out of range for " +
                std::to_string(logits.size()) + " classes");
  }
  const auto [lo, hi] = std::minmax_element(logits.data().begin(), logits.data().end());
  Tensor out = Tensor::filled(logits.shape(), *lo);
  out[class_index] = *hi;
  return out;
}

Tensor relu_adjoint(const Tensor& backward) { return relu(backward); }

Tensor dense_adjoint(const Tensor& weight, const Tensor& bias, const Tensor& backward) {
  if (backward.shape() != bias.shape()) {
    throw ShapeError("dense adjoint: backward signal " + backward.shape().to_string() +
                     " does not match bias " + bias.shape().to_string());
  }
  Tensor centered = backward;
  for (std::size_t i = 0; i < centered.size(); ++i) {
    if (centered[i] != 0.0f) centered[i] -= bias[i];
  }
  return affine_transpose(weight, centered);
}

Tensor fb_mask(const Tensor& forward, const Tensor& backward, float tau) {
  require_same_shape(forward, backward, "forward-backward mask");
  Tensor out(backward.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (forward[i] * backward[i] > tau) out[i] = backward[i];
  }
  return out;
}

Tensor flatten_adjoint(const Tensor& backward, const Shape& target) {
  if (backward.shape().rank() != 1 || backward.size() != target.size()) {
    throw ShapeError("cannot unflatten " + backward.shape().to_string() + " into " +
                     target.to_string());
  }
  return backward.reshaped(target);
}

std::size_t top_map_count(std::size_t channels, float fraction) {
  // The small offset absorbs float rounding of fractions like 0.1f * 10.
  const double wanted = std::ceil(static_cast<double>(fraction) * static_cast<double>(channels) -
                                  1e-4);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(wanted, 1.0)), 1, channels);
}

Tensor select_top_maps(const Tensor& backward, float top_fraction) {
  if (backward.shape().rank() != 3) {
    throw ShapeError("feature-map selection needs [C,H,W], got " +
                     backward.shape().to_string());
  }
  const std::size_t channels = backward.shape()[0];
  const std::size_t plane = backward.shape()[1] * backward.shape()[2];
  std::vector<float> totals(channels, 0.0f);
  for (std::size_t c = 0; c < channels; ++c) {
    const float* p = backward.data().data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) totals[c] += p[i];
  }
  std::vector<std::size_t> order(channels);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return totals[a] > totals[b]; });

  Tensor out(backward.shape());
  const std::size_t keep = top_map_count(channels, top_fraction);
  for (std::size_t r = 0; r < keep; ++r) {
    const std::size_t c = order[r];
    std::copy_n(backward.data().begin() + static_cast<std::ptrdiff_t>(c * plane), plane,
                out.data().begin() + static_cast<std::ptrdiff_t>(c * plane));
  }
  return out;
}

Tensor unpool_replicate(const Shape& pool_input_shape, const Tensor& backward_pooled,
                        const PoolGeometry& geom) {
  const Shape expected = pool_output_shape(pool_input_shape, geom);
  if (backward_pooled.shape() != expected) {
    throw ShapeError("pooled backward signal " + backward_pooled.shape().to_string() +
                     " does not match pool output " + expected.to_string());
  }
  const std::size_t c = pool_input_shape[0];
  const std::size_t h = pool_input_shape[1];
  const std::size_t w = pool_input_shape[2];
  Tensor sum(pool_input_shape);
  std::vector<std::uint32_t> hits(pool_input_shape.size(), 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < expected[1]; ++y) {
      for (std::size_t x = 0; x < expected[2]; ++x) {
        const float value = backward_pooled.at(ch, y, x);
        for (std::size_t u = 0; u < geom.kernel.h; ++u) {
          for (std::size_t v = 0; v < geom.kernel.w; ++v) {
            const std::size_t yy = y * geom.stride.h + u;
            const std::size_t xx = x * geom.stride.w + v;
            sum.at(ch, yy, xx) += value;
            ++hits[(ch * h + yy) * w + xx];
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    if (hits[i] > 1) sum[i] /= static_cast<float>(hits[i]);
  }
  return sum;
}

Tensor unpool_adjoint(const Tensor& pool_input, const Tensor& backward_pooled,
                      const PoolGeometry& geom) {
  Tensor out = unpool_replicate(pool_input.shape(), backward_pooled, geom);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] != 0.0f) out[i] = std::min(pool_input[i], out[i]);
  }
  return out;
}

Tensor deconv_adjoint(const Tensor& weight, const Tensor& bias, const Tensor& backward,
                      const ConvGeometry& geom, const Shape& out_shape) {
  if (backward.shape().rank() != 3 || bias.shape() != Shape{backward.shape()[0]}) {
    throw ShapeError("deconvolution bias " + bias.shape().to_string() +
                     " does not match backward signal " + backward.shape().to_string());
  }
  Tensor centered = backward;
  const std::size_t plane = backward.shape()[1] * backward.shape()[2];
  for (std::size_t c = 0; c < backward.shape()[0]; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      float& v = centered[c * plane + i];
      if (v != 0.0f) v -= bias[c];
    }
  }
  return conv2d_transpose_flipped(centered, weight, geom, out_shape);
}

FbiResult explain_fbi_traced(const ActivationTrace& trace, const Architecture& arch,
                             const WeightArchive& weights, std::size_t class_index,
                             const FbiConfig& config) {
  config.check();
  check_trace(arch, trace);
  const std::size_t depth = arch.layers.size();

  FbiResult result;
  result.signals.resize(depth + 1);
  Tensor signal = softmax_adjoint(trace.logits(), class_index);
  result.log.push_back({depth, "seed", {BackwardOp::kSeedSoftmaxAdjoint}});
  result.signals[depth] = signal;

  for (std::size_t l = depth; l-- > 0;) {
    const LayerSpec& layer = arch.layers[l];
    BackwardStep step{l, layer.name, {}};
    bool weighted = false;
    switch (layer.kind) {
      case LayerKind::kDense:
        signal = dense_adjoint(weights.at(layer.weight_key()), weights.at(layer.bias_key()),
                               signal);
        step.ops = {BackwardOp::kBiasSubtract, BackwardOp::kDenseTranspose};
        weighted = true;
        break;
      case LayerKind::kConv2d:
        if (config.bias_adjoint) {
          signal = deconv_adjoint(weights.at(layer.weight_key()), weights.at(layer.bias_key()),
                                  signal, layer.conv, arch.input_of(l));
          step.ops.push_back(BackwardOp::kBiasSubtract);
        } else {
          signal = conv2d_transpose_flipped(signal, weights.at(layer.weight_key()), layer.conv,
                                            arch.input_of(l));
        }
        step.ops.push_back(BackwardOp::kConvTranspose);
        weighted = true;
        break;
      case LayerKind::kFlatten:
        signal = flatten_adjoint(signal, arch.input_of(l));
        step.ops.push_back(BackwardOp::kReshape);
        if (signal.shape().rank() == 3) {
          signal = select_top_maps(signal, config.top_fraction);
          step.ops.push_back(BackwardOp::kSelectTopMaps);
        }
        break;
      case LayerKind::kMaxPool:
        signal = unpool_adjoint(trace.layers[l].pool_input, signal, layer.pool);
        step.ops.push_back(BackwardOp::kUnpoolReplicateMin);
        break;
    }
    // Raw pixels are not activations: nothing below layer 0 is masked.
    if (weighted && l > 0) {
      signal = fb_mask(trace.input_of(l), signal, config.tau);
      step.ops.push_back(BackwardOp::kForwardMask);
    }
    // Every forward relu site is rectified, also below pooling and flatten.
    if (l > 0 && arch.layers[l - 1].activation == Activation::kRelu) {
      signal = relu_adjoint(signal);
      step.ops.push_back(BackwardOp::kReluBackward);
    }
    result.signals[l] = signal;
    result.log.push_back(std::move(step));
  }

  result.saliency = SaliencyMap::from_values(std::move(signal), Method::kFbi, class_index);
  return result;
}

SaliencyMap explain_fbi(const ActivationTrace& trace, const Architecture& arch,
                        const WeightArchive& weights, std::size_t class_index,
                        const FbiConfig& config) {
  return explain_fbi_traced(trace, arch, weights, class_index, config).saliency;
}

}  // namespace fbi
