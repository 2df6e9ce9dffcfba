#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fbi/model.hpp"
#include "fbi/saliency.hpp"

namespace fbi {

/// How a ReLU site passes the backward signal g given its forward input z.
enum class ReluRule {
  kPlain,      // g where z > 0 (the true gradient)
  kGuided,     // g where z > 0 and g > 0
  kDeconvnet,  // max(g, 0), forward ignored
};

struct BackwardOptions {
  /// Multiplies the one-hot seed.
  float seed_scale = 1.0f;
  /// When non-empty, backward feature maps are permuted at the flatten
  /// transition: map c is replaced by map permutation[c]. Used to build
  /// permutation nulls.
  std::vector<std::size_t> channel_permutation;
};

/// Gates applied at one ReLU site: forward_open[i] = z[i] > 0 and
/// backward_open[i] = g[i] > 0 for the incoming signal, applied[i] = the gate
/// the rule actually used.
struct GateRecord {
  std::size_t layer = 0;
  std::vector<std::uint8_t> forward_open;
  std::vector<std::uint8_t> backward_open;
  std::vector<std::uint8_t> applied;
};

struct BackwardResult {
  SaliencyMap saliency;
  BackwardLog log;
  std::vector<GateRecord> gates;
};

/// Backpropagate the one-hot seed on the pre-softmax score z_L[c] through the
/// recorded trace. Dense and conv layers use their transposes without bias
/// terms, pooling routes through the recorded switches, and ReLU sites follow
/// `rule`.
BackwardResult backward_pass_traced(const ActivationTrace& trace, const Architecture& arch,
                                    const WeightArchive& weights, std::size_t class_index,
                                    ReluRule rule, const BackwardOptions& options = {});

SaliencyMap backward_pass(const ActivationTrace& trace, const Architecture& arch,
                          const WeightArchive& weights, std::size_t class_index, ReluRule rule);

SaliencyMap explain_guided(const ActivationTrace& trace, const Architecture& arch,
                           const WeightArchive& weights, std::size_t class_index);

SaliencyMap explain_deconvnet(const ActivationTrace& trace, const Architecture& arch,
                              const WeightArchive& weights, std::size_t class_index);

/// Route a pooled signal back to the pool input through the switches.
Tensor unpool_switches(const Tensor& backward_pooled, const Switches& switches,
                       const Shape& pool_input_shape);

}  // namespace fbi
