#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fbi/ops.hpp"
#include "fbi/tensor.hpp"

namespace fbi {

enum class LayerKind { kConv2d, kMaxPool, kFlatten, kDense };
enum class Activation { kNone, kRelu, kSoftmax };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Activation activation);

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::string name;
  Activation activation = Activation::kNone;

  // conv2d
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  ConvGeometry conv;

  // maxpool
  PoolGeometry pool;

  // dense
  std::size_t in_features = 0;
  std::size_t out_features = 0;

  bool has_weights() const {
    return kind == LayerKind::kConv2d || kind == LayerKind::kDense;
  }
  std::string weight_key() const { return name + ".weight"; }
  std::string bias_key() const { return name + ".bias"; }
  Shape weight_shape() const;
  Shape bias_shape() const;
};

/// A validated sequential network description.
///
/// `shapes` holds the static shape chain: shapes[0] is the input shape and
/// shapes[l + 1] the output shape of layers[l].
struct Architecture {
  Shape input_shape;
  std::vector<float> input_mean;  // per input channel; zeros when absent
  std::vector<LayerSpec> layers;
  std::vector<Shape> shapes;

  std::size_t num_classes() const { return shapes.back()[0]; }
  const Shape& input_of(std::size_t layer) const { return shapes[layer]; }
  const Shape& output_of(std::size_t layer) const { return shapes[layer + 1]; }
};

/// Parse the JSON architecture document and compute its shape chain.
///
/// Throws ParseError for malformed text (with line and column) or bad
/// fields (with a `layers[i].key` path), ShapeError when consecutive layers
/// do not compose, and ValidationError for structural rule violations.
Architecture load_architecture(std::string_view text);
Architecture load_architecture_file(const std::string& path);

/// Recompute the shape chain and structural rules of an in-memory
/// architecture (used by load_architecture and by programmatic builders).
void finalize_architecture(Architecture& arch);

/// Named tensors, iterated in insertion order.
class WeightArchive {
 public:
  void insert(std::string name, Tensor tensor);
  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Decode an FBIW archive (little-endian; see README for the layout).
WeightArchive load_weights(std::span<const std::uint8_t> bytes);
WeightArchive load_weights_file(const std::string& path);

/// Canonical FBIW encoding, entries in archive order.
std::vector<std::uint8_t> save_weights(const WeightArchive& archive);

/// Throws ValidationError naming the layer and the expected/actual shapes when
/// a weighted layer lacks a matching "<name>.weight" / "<name>.bias" entry.
void validate(const Architecture& arch, const WeightArchive& weights);

/// Forward intermediates of one layer.
struct LayerTrace {
  Tensor z;  // pre-activation
  Tensor a;  // post-activation
  // maxpool only
  Tensor pool_input;
  Switches switches;
};

struct ActivationTrace {
  Tensor input;
  std::vector<LayerTrace> layers;
  Tensor probabilities;  // output of the final softmax

  /// Forward activation entering layer `l` (the input image for l = 0).
  const Tensor& input_of(std::size_t l) const {
    return l == 0 ? input : layers[l - 1].a;
  }
  const Tensor& logits() const { return layers.back().z; }
};

struct Prediction {
  std::vector<float> probabilities;
  std::size_t top_class = 0;

  /// Indices of the `n` most probable classes, ties by lower index.
  std::vector<std::size_t> top(std::size_t n) const;
};

/// Lowest index among the maximal entries.
std::size_t argmax(std::span<const float> values);

struct ForwardResult {
  ActivationTrace trace;
  Prediction prediction;
};

/// Run the network and keep every intermediate. Assumes validate() passed.
ForwardResult forward_trace(const Architecture& arch, const WeightArchive& weights,
                            const Tensor& input);

/// Throws Error when `trace` was not produced by `arch`.
void check_trace(const Architecture& arch, const ActivationTrace& trace);

}  // namespace fbi
