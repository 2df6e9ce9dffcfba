#pragma once

#include <cstddef>
#include <vector>

#include "fbi/model.hpp"
#include "fbi/saliency.hpp"
#include "fbi/tensor.hpp"

namespace fbi {

/// Hyperparameters of the forward-backward walk.
///
/// `tau` thresholds the entrywise product of forward activation and backward
/// signal; it is compared against raw activation products, so its useful
/// range depends on the activation scale of the model (10 suits VGG-16 on
/// mean-subtracted 0..255 pixels). `top_fraction` is the share of feature maps
/// kept where the dense head re-enters the convolutional trunk.
struct FbiConfig {
  static constexpr float kDefaultTau = 10.0f;
  static constexpr float kDefaultTopFraction = 0.5f;

  float tau = kDefaultTau;
  float top_fraction = kDefaultTopFraction;
  /// Subtract the conv bias before the flipped-filter transpose.
  bool bias_adjoint = true;

  /// Throws Error unless tau >= 0 and 0 < top_fraction <= 1.
  void check() const;
};

/// z_hat_i = max(z) for i == c, min(z) otherwise.
Tensor softmax_adjoint(const Tensor& logits, std::size_t class_index);

Tensor relu_adjoint(const Tensor& backward);

/// W^T (z_hat - b), with b subtracted only on the support of z_hat: entries
/// already zeroed by a mask carry no signal and stay zero.
Tensor dense_adjoint(const Tensor& weight, const Tensor& bias, const Tensor& backward);

/// Keeps backward[i] where forward[i] * backward[i] > tau, zero elsewhere.
Tensor fb_mask(const Tensor& forward, const Tensor& backward, float tau);

/// Row-major reshape of a flat backward vector to a [C,H,W] map.
Tensor flatten_adjoint(const Tensor& backward, const Shape& target);

/// Number of maps kept: ceil(fraction * C), clamped to [1, C].
std::size_t top_map_count(std::size_t channels, float fraction);

/// Keep the top_map_count() maps with the largest plain sum, ties to the lower
/// channel index; zero the others.
Tensor select_top_maps(const Tensor& backward, float top_fraction);

/// Replicate every pooled backward value over its window (mean where windows
/// overlap), then take min(pool_input, replicated). Positions whose replicated
/// value is exactly zero are forced to zero, so a negative forward input cannot
/// leak through a silent window.
Tensor unpool_adjoint(const Tensor& pool_input, const Tensor& backward_pooled,
                      const PoolGeometry& geom);

/// The replicated (overlap-averaged) map before the min, exposed for tests
/// and diagnostics.
Tensor unpool_replicate(const Shape& pool_input_shape, const Tensor& backward_pooled,
                        const PoolGeometry& geom);

/// conv2d_transpose_flipped(z_hat - bias per channel), bias subtracted on the
/// support of z_hat only (as in dense_adjoint).
Tensor deconv_adjoint(const Tensor& weight, const Tensor& bias, const Tensor& backward,
                      const ConvGeometry& geom, const Shape& out_shape);

struct FbiResult {
  SaliencyMap saliency;
  BackwardLog log;
  /// signals[l] is the backward signal at the input of layer l once that
  /// layer has been traversed; signals[L] is the softmax adjoint seed.
  std::vector<Tensor> signals;
};

FbiResult explain_fbi_traced(const ActivationTrace& trace, const Architecture& arch,
                             const WeightArchive& weights, std::size_t class_index,
                             const FbiConfig& config);

SaliencyMap explain_fbi(const ActivationTrace& trace, const Architecture& arch,
                        const WeightArchive& weights, std::size_t class_index,
                        const FbiConfig& config = {});

}  // namespace fbi
