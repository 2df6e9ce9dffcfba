#include "fbi/baselines.hpp"

#include <algorithm>

#include "fbi/ops.hpp"

namespace fbi {
namespace {

Method method_for(ReluRule rule) {
  switch (rule) {
    case ReluRule::kPlain: return Method::kPlain;
    case ReluRule::kGuided: return Method::kGuided;
    case ReluRule::kDeconvnet: return Method::kDeconvnet;
  }
  return Method::kPlain;
}

BackwardOp op_for(ReluRule rule) {
  switch (rule) {
    case ReluRule::kPlain: return BackwardOp::kReluForwardGate;
    case ReluRule::kGuided: return BackwardOp::kReluGuided;
    case ReluRule::kDeconvnet: return BackwardOp::kReluBackward;
  }
  return BackwardOp::kReluForwardGate;
}

Tensor permute_channels(const Tensor& maps, const std::vector<std::size_t>& permutation) {
  const std::size_t channels = maps.shape()[0];
  if (permutation.size() != channels) {
    throw Error("channel permutation has " + std::to_string(permutation.size()) +
                " entries for " + std::to_string(channels) + " maps");
  }
  std::vector<std::uint8_t> seen(channels, 0);
  const std::size_t plane = maps.size() / channels;
  Tensor out(maps.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t from = permutation[c];
    if (from >= channels || seen[from]++ != 0) throw Error("invalid channel permutation");
    std::copy_n(maps.data().begin() + static_cast<std::ptrdiff_t>(from * plane), plane,
                out.data().begin() + static_cast<std::ptrdiff_t>(c * plane));
  }
  return out;
}

}  // namespace

Tensor unpool_switches(const Tensor& backward_pooled, const Switches& switches,
                       const Shape& pool_input_shape) {
  if (backward_pooled.shape() != switches.shape || pool_input_shape.rank() != 3 ||
      pool_input_shape[0] != switches.shape[0]) {
    throw ShapeError("switch unpooling: signal " + backward_pooled.shape().to_string() +
                     " does not match switches " + switches.shape.to_string());
  }
  Tensor out(pool_input_shape);
  const std::size_t plane_in = pool_input_shape[1] * pool_input_shape[2];
  const std::size_t plane_out = switches.shape[1] * switches.shape[2];
  for (std::size_t c = 0; c < switches.shape[0]; ++c) {
    for (std::size_t p = 0; p < plane_out; ++p) {
      const std::size_t k = c * plane_out + p;
      out[c * plane_in + switches.index[k]] += backward_pooled[k];
    }
  }
  return out;
}

BackwardResult backward_pass_traced(const ActivationTrace& trace, const Architecture& arch,
                                    const WeightArchive& weights, std::size_t class_index,
                                    ReluRule rule, const BackwardOptions& options) {
  check_trace(arch, trace);
  const std::size_t depth = arch.layers.size();
  if (class_index >= arch.num_classes()) {
    throw Error("class index " + std::to_string(class_index) + " out of range for " +
                std::to_string(arch.num_classes()) + " classes");
  }

  BackwardResult result;
  Tensor signal(arch.output_of(depth - 1));
  signal[class_index] = options.seed_scale;
  result.log.push_back({depth, "seed", {BackwardOp::kSeedOneHot}});

  for (std::size_t l = depth; l-- > 0;) {
    const LayerSpec& layer = arch.layers[l];
    BackwardStep step{l, layer.name, {}};
    switch (layer.kind) {
      case LayerKind::kDense:
        signal = affine_transpose(weights.at(layer.weight_key()), signal);
        step.ops.push_back(BackwardOp::kDenseTranspose);
        break;
      case LayerKind::kConv2d:
        signal = conv2d_transpose_flipped(signal, weights.at(layer.weight_key()), layer.conv,
                                          arch.input_of(l));
        step.ops.push_back(BackwardOp::kConvTranspose);
        break;
      case LayerKind::kFlatten:
        signal = signal.reshaped(arch.input_of(l));
        step.ops.push_back(BackwardOp::kReshape);
        if (!options.channel_permutation.empty() && signal.shape().rank() == 3) {
          signal = permute_channels(signal, options.channel_permutation);
          step.ops.push_back(BackwardOp::kChannelPermute);
        }
        break;
      case LayerKind::kMaxPool:
        signal = unpool_switches(signal, trace.layers[l].switches, arch.input_of(l));
        step.ops.push_back(BackwardOp::kUnpoolSwitch);
        break;
    }

    if (l > 0 && arch.layers[l - 1].activation == Activation::kRelu) {
      const Tensor& z = trace.layers[l - 1].z;
      GateRecord gate;
      gate.layer = l - 1;
      gate.forward_open.resize(signal.size());
      gate.backward_open.resize(signal.size());
      gate.applied.resize(signal.size());
      for (std::size_t i = 0; i < signal.size(); ++i) {
        const bool fwd = z[i] > 0.0f;
        const bool bwd = signal[i] > 0.0f;
        bool open = false;
        switch (rule) {
          case ReluRule::kPlain: open = fwd; break;
          case ReluRule::kGuided: open = fwd && bwd; break;
          case ReluRule::kDeconvnet: open = bwd; break;
        }
        gate.forward_open[i] = fwd;
        gate.backward_open[i] = bwd;
        gate.applied[i] = open;
        if (!open) signal[i] = 0.0f;
      }
      result.gates.push_back(std::move(gate));
      step.ops.push_back(op_for(rule));
    }
    result.log.push_back(std::move(step));
  }

  result.saliency = SaliencyMap::from_values(std::move(signal), method_for(rule), class_index);
  return result;
}

SaliencyMap backward_pass(const ActivationTrace& trace, const Architecture& arch,
                          const WeightArchive& weights, std::size_t class_index, ReluRule rule) {
  return backward_pass_traced(trace, arch, weights, class_index, rule).saliency;
}

SaliencyMap explain_guided(const ActivationTrace& trace, const Architecture& arch,
                           const WeightArchive& weights, std::size_t class_index) {
  return backward_pass(trace, arch, weights, class_index, ReluRule::kGuided);
}

SaliencyMap explain_deconvnet(const ActivationTrace& trace, const Architecture& arch,
                              const WeightArchive& weights, std::size_t class_index) {
  return backward_pass(trace, arch, weights, class_index, ReluRule::kDeconvnet);
}

}  // namespace fbi
