#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fbi/model.hpp"
#include "fbi/tensor.hpp"

namespace fbi {

enum class Method { kFbi, kGuided, kDeconvnet, kPlain };

std::string_view to_string(Method method);

/// Signed input-domain attribution and its support (support[i] = values[i] != 0).
struct SaliencyMap {
  Tensor values;
  std::vector<std::uint8_t> support;
  Method method = Method::kFbi;
  std::size_t class_index = 0;

  static SaliencyMap from_values(Tensor values, Method method, std::size_t class_index);

  std::size_t support_size() const;
};

/// Primitive steps of a backward walk, recorded for structural comparison of
/// the different engines.
enum class BackwardOp {
  kSeedSoftmaxAdjoint,
  kSeedOneHot,
  kBiasSubtract,
  kDenseTranspose,
  kConvTranspose,
  kForwardMask,
  kReluBackward,   // max(0, g): applied to the backward signal
  kReluForwardGate,  // g where forward z > 0
  kReluGuided,     // both gates
  kReshape,
  kSelectTopMaps,
  kChannelPermute,
  kUnpoolReplicateMin,
  kUnpoolSwitch,
};

std::string_view to_string(BackwardOp op);

/// Operators applied while stepping back through one layer. The seed step has
/// layer index equal to the number of layers.
struct BackwardStep {
  std::size_t layer = 0;
  std::string name;
  std::vector<BackwardOp> ops;
};

using BackwardLog = std::vector<BackwardStep>;

}  // namespace fbi
