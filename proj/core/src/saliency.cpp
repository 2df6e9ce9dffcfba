#include "fbi/saliency.hpp"

#include <algorithm>
#include <numeric>

namespace fbi {

std::string_view to_string(Method method) {
  switch (method) {
    case Method::kFbi: return "fbi";
    case Method::kGuided: return "guided";
    case Method::kDeconvnet: return "deconvnet";
    case Method::kPlain: return "plain";
  }
  return "?";
}

SaliencyMap SaliencyMap::from_values(Tensor values, Method method, std::size_t class_index) {
  SaliencyMap map;
  map.support.resize(values.size());
  std::transform(values.data().begin(), values.data().end(), map.support.begin(),
                 [](float v) { return static_cast<std::uint8_t>(v != 0.0f); });
  map.values = std::move(values);
  map.method = method;
  map.class_index = class_index;
  return map;
}

std::size_t SaliencyMap::support_size() const {
  return std::accumulate(support.begin(), support.end(), std::size_t{0});
}

std::string_view to_string(BackwardOp op) {
  switch (op) {
    case BackwardOp::kSeedSoftmaxAdjoint: return "seed_softmax_adjoint";
    case BackwardOp::kSeedOneHot: return "seed_one_hot";
    case BackwardOp::kBiasSubtract: return "bias_subtract";
    case BackwardOp::kDenseTranspose: return "dense_transpose";
    case BackwardOp::kConvTranspose: return "conv_transpose";
    case BackwardOp::kForwardMask: return "forward_mask";
    case BackwardOp::kReluBackward: return "relu_backward";
    case BackwardOp::kReluForwardGate: return "relu_forward_gate";
    case BackwardOp::kReluGuided: return "relu_guided";
    case BackwardOp::kReshape: return "reshape";
    case BackwardOp::kSelectTopMaps: return "select_top_maps";
    case BackwardOp::kChannelPermute: return "channel_permute";
    case BackwardOp::kUnpoolReplicateMin: return "unpool_replicate_min";
    case BackwardOp::kUnpoolSwitch: return "unpool_switch";
  }
  return "?";
}

}  // namespace fbi
