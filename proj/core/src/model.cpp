#include "fbi/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fbi {
namespace {

using nlohmann::json;

constexpr std::uint32_t kFbiwVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
  throw ParseError(path + ": " + what);
}

std::size_t read_extent(const json& node, const std::string& path) {
  if (!node.is_number_integer() || node.get<std::int64_t>() < 1) {
    field_error(path, "expected a positive integer, got " + node.dump());
  }
  return node.get<std::size_t>();
}

std::size_t read_nonnegative(const json& node, const std::string& path) {
  if (!node.is_number_integer() || node.get<std::int64_t>() < 0) {
    field_error(path, "expected a non-negative integer, got " + node.dump());
  }
  return node.get<std::size_t>();
}

Extent2 read_pair(const json& node, const std::string& path, bool allow_zero) {
  if (!node.is_array() || node.size() != 2) {
    field_error(path, "expected an array of 2 integers, got " + node.dump());
  }
  if (allow_zero) {
    return {read_nonnegative(node[0], path + "[0]"), read_nonnegative(node[1], path + "[1]")};
  }
  return {read_extent(node[0], path + "[0]"), read_extent(node[1], path + "[1]")};
}

const json& require_key(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) field_error(path, std::string("missing key '") + key + "'");
  return *it;
}

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                         const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      field_error(path, "unknown key '" + it.key() + "'");
    }
  }
}

LayerKind parse_kind(const json& node, const std::string& path) {
  if (node.is_string()) {
    const auto s = node.get<std::string>();
    if (s == "conv2d") return LayerKind::kConv2d;
    if (s == "maxpool") return LayerKind::kMaxPool;
    if (s == "flatten") return LayerKind::kFlatten;
    if (s == "dense") return LayerKind::kDense;
  }
  field_error(path, "expected one of conv2d, maxpool, flatten, dense; got " + node.dump());
}

Activation parse_activation(const json& node, const std::string& path) {
  if (node.is_string()) {
    const auto s = node.get<std::string>();
    if (s == "none") return Activation::kNone;
    if (s == "relu") return Activation::kRelu;
    if (s == "softmax") return Activation::kSoftmax;
  }
  field_error(path, "expected one of none, relu, softmax; got " + node.dump());
}

LayerSpec parse_layer(const json& node, const std::string& path) {
  if (!node.is_object()) field_error(path, "expected an object");
  LayerSpec layer;
  layer.kind = parse_kind(require_key(node, "type", path), path + ".type");
  const json& name = require_key(node, "name", path);
  if (!name.is_string() || name.get<std::string>().empty()) {
    field_error(path + ".name", "expected a non-empty string");
  }
  layer.name = name.get<std::string>();
  if (auto it = node.find("activation"); it != node.end()) {
    layer.activation = parse_activation(*it, path + ".activation");
  }

  switch (layer.kind) {
    case LayerKind::kConv2d:
      reject_unknown_keys(node,
                          {"type", "name", "activation", "in_channels", "out_channels",
                           "kernel", "stride", "padding"},
                          path);
      layer.in_channels =
          read_extent(require_key(node, "in_channels", path), path + ".in_channels");
      layer.out_channels =
          read_extent(require_key(node, "out_channels", path), path + ".out_channels");
      layer.conv.kernel = read_pair(require_key(node, "kernel", path), path + ".kernel", false);
      if (auto it = node.find("stride"); it != node.end()) {
        layer.conv.stride = read_pair(*it, path + ".stride", false);
      }
      if (auto it = node.find("padding"); it != node.end()) {
        layer.conv.padding = read_pair(*it, path + ".padding", true);
      }
      break;
    case LayerKind::kMaxPool:
      reject_unknown_keys(node, {"type", "name", "activation", "kernel", "stride"}, path);
      layer.pool.kernel = read_pair(require_key(node, "kernel", path), path + ".kernel", false);
      layer.pool.stride = layer.pool.kernel;
      if (auto it = node.find("stride"); it != node.end()) {
        layer.pool.stride = read_pair(*it, path + ".stride", false);
      }
      break;
    case LayerKind::kFlatten:
      reject_unknown_keys(node, {"type", "name", "activation"}, path);
      break;
    case LayerKind::kDense:
      reject_unknown_keys(node, {"type", "name", "activation", "in", "out"}, path);
      layer.in_features = read_extent(require_key(node, "in", path), path + ".in");
      layer.out_features = read_extent(require_key(node, "out", path), path + ".out");
      break;
  }
  return layer;
}

std::string describe_position(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t column = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  // nlohmann reports the byte after the offending token.
  if (column > 1) --column;
  return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

std::vector<std::uint8_t> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("truncated FBIW archive: " + std::string(what) + " at offset " +
                        std::to_string(pos_) + " needs " + std::to_string(n) +
                        " bytes, " + std::to_string(bytes_.size() - pos_) + " remain");
    }
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int b = 3; b >= 0; --b) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(b)];
    pos_ += 4;
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kDense: return "dense";
  }
  return "?";
}

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::kNone: return "none";
    case Activation::kRelu: return "relu";
    case Activation::kSoftmax: return "softmax";
  }
  return "?";
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::kConv2d) {
    return Shape{out_channels, in_channels, conv.kernel.h, conv.kernel.w};
  }
  return Shape{out_features, in_features};
}

Shape LayerSpec::bias_shape() const {
  return Shape{kind == LayerKind::kConv2d ? out_channels : out_features};
}

void finalize_architecture(Architecture& arch) {
  if (arch.input_shape.rank() != 3 && arch.input_shape.rank() != 1) {
    throw ValidationError("input_shape must be [C,H,W] or [N], got " +
                          arch.input_shape.to_string());
  }
  if (arch.layers.empty()) throw ValidationError("architecture has no layers");
  const std::size_t channels = arch.input_shape[0];
  if (arch.input_mean.empty()) arch.input_mean.assign(channels, 0.0f);
  if (arch.input_mean.size() != channels) {
    throw ValidationError("input_mean has " + std::to_string(arch.input_mean.size()) +
                          " entries for " + std::to_string(channels) + " input channels");
  }

  std::set<std::string, std::less<>> names;
  arch.shapes.assign(1, arch.input_shape);
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& layer = arch.layers[l];
    const Shape& in = arch.shapes.back();
    const std::string where = "layer '" + layer.name + "' (" +
                              std::string(to_string(layer.kind)) + ")";
    if (!names.insert(layer.name).second) {
      throw ValidationError("duplicate layer name '" + layer.name + "'");
    }
    const bool last = l + 1 == arch.layers.size();
    if (layer.activation == Activation::kSoftmax && !last) {
      throw ValidationError(where + ": softmax is only allowed on the final layer");
    }
    if ((layer.kind == LayerKind::kMaxPool || layer.kind == LayerKind::kFlatten) &&
        layer.activation != Activation::kNone) {
      throw ValidationError(where + ": activation must be none");
    }

    Shape out;
    switch (layer.kind) {
      case LayerKind::kConv2d:
        if (in.rank() != 3) {
          throw ShapeError(where + ": expects a [C,H,W] input, got " + in.to_string());
        }
        if (in[0] != layer.in_channels) {
          throw ShapeError(where + ": declares " + std::to_string(layer.in_channels) +
                           " input channels but receives " + in.to_string());
        }
        try {
          out = conv_output_shape(in, layer.out_channels, layer.conv);
        } catch (const ShapeError& e) {
          throw ShapeError(where + ": " + e.what());
        }
        break;
      case LayerKind::kMaxPool:
        if (in.rank() != 3) {
          throw ShapeError(where + ": expects a [C,H,W] input, got " + in.to_string());
        }
        try {
          out = pool_output_shape(in, layer.pool);
        } catch (const ShapeError& e) {
          throw ShapeError(where + ": " + e.what());
        }
        break;
      case LayerKind::kFlatten:
        out = Shape{in.size()};
        break;
      case LayerKind::kDense:
        if (in.rank() != 1 || in[0] != layer.in_features) {
          throw ShapeError(where + ": expects input [" + std::to_string(layer.in_features) +
                           "], got " + in.to_string());
        }
        out = Shape{layer.out_features};
        break;
    }
    arch.shapes.push_back(out);
  }

  const LayerSpec& final_layer = arch.layers.back();
  if (final_layer.kind != LayerKind::kDense ||
      final_layer.activation != Activation::kSoftmax) {
    throw ValidationError("final layer '" + final_layer.name +
                          "' must be dense with softmax activation");
  }
}

Architecture load_architecture(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError("architecture parse error at " + describe_position(text, e.byte) +
                     ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError("architecture: top level must be an object");
  reject_unknown_keys(doc, {"input_shape", "input_mean", "layers"}, "architecture");

  Architecture arch;
  const json& shape = require_key(doc, "input_shape", "architecture");
  if (!shape.is_array() || (shape.size() != 3 && shape.size() != 1)) {
    field_error("input_shape", "expected [C,H,W] or [N], got " + shape.dump());
  }
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dims.push_back(read_extent(shape[i], "input_shape[" + std::to_string(i) + "]"));
  }
  arch.input_shape = Shape(std::move(dims));

  if (auto it = doc.find("input_mean"); it != doc.end()) {
    if (!it->is_array()) field_error("input_mean", "expected an array of numbers");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& v = (*it)[i];
      if (!v.is_number() || !std::isfinite(v.get<double>())) {
        field_error("input_mean[" + std::to_string(i) + "]", "expected a finite number");
      }
      arch.input_mean.push_back(v.get<float>());
    }
  }

  const json& layers = require_key(doc, "layers", "architecture");
  if (!layers.is_array()) field_error("layers", "expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    arch.layers.push_back(parse_layer(layers[i], "layers[" + std::to_string(i) + "]"));
  }
  finalize_architecture(arch);
  return arch;
}

Architecture load_architecture_file(const std::string& path) {
  const auto bytes = read_binary_file(path);
  return load_architecture(
      std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void WeightArchive::insert(std::string name, Tensor tensor) {
  if (index_.contains(name)) throw FormatError("duplicate weight entry '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor* WeightArchive::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

const Tensor& WeightArchive::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (t == nullptr) throw ValidationError("missing weight entry '" + std::string(name) + "'");
  return *t;
}

WeightArchive load_weights(std::span<const std::uint8_t> bytes) {
  ByteReader reader(bytes);
  const auto magic = reader.take(4, "magic");
  if (std::memcmp(magic.data(), "FBIW", 4) != 0) {
    throw FormatError("bad magic: expected 'FBIW'");
  }
  const std::uint32_t version = reader.u32("version");
  if (version != kFbiwVersion) {
    throw FormatError("unsupported FBIW version " + std::to_string(version));
  }
  const std::uint32_t count = reader.u32("entry count");

  WeightArchive archive;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t name_len = reader.u32("name length");
    const auto name_bytes = reader.take(name_len, "entry name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint32_t rank = reader.u32("rank");
    if (rank < 1 || rank > Shape::kMaxRank) {
      throw FormatError("entry '" + name + "': unsupported rank " + std::to_string(rank));
    }
    std::vector<std::size_t> dims;
    for (std::uint32_t r = 0; r < rank; ++r) dims.push_back(reader.u32("dimension"));
    Shape shape = [&] {
      try {
        return Shape(std::move(dims));
      } catch (const ShapeError& err) {
        throw FormatError("entry '" + name + "': " + err.what());
      }
    }();
    const std::uint8_t dtype = reader.u8("dtype");
    if (dtype != kDtypeF32) {
      throw FormatError("entry '" + name + "': unsupported dtype " + std::to_string(dtype));
    }
    const std::size_t n = shape.size();
    if (n > (bytes.size() - reader.offset()) / 4) reader.need(n * 4, "payload");
    const std::size_t payload_offset = reader.offset();
    const auto payload = reader.take(n * 4, "payload");
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t raw = 0;
      for (int b = 3; b >= 0; --b) raw = (raw << 8) | payload[i * 4 + static_cast<std::size_t>(b)];
      const float v = std::bit_cast<float>(raw);
      if (!std::isfinite(v)) {
        throw FormatError("entry '" + name + "': non-finite value at byte offset " +
                          std::to_string(payload_offset + i * 4));
      }
      values[i] = v;
    }
    archive.insert(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!reader.done()) {
    throw FormatError("FBIW archive has " + std::to_string(bytes.size() - reader.offset()) +
                      " trailing bytes");
  }
  return archive;
}

WeightArchive load_weights_file(const std::string& path) {
  const auto bytes = read_binary_file(path);
  try {
    return load_weights(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<std::uint8_t> save_weights(const WeightArchive& archive) {
  std::vector<std::uint8_t> out{'F', 'B', 'I', 'W'};
  put_u32(out, kFbiwVersion);
  put_u32(out, static_cast<std::uint32_t>(archive.size()));
  for (const auto& [name, tensor] : archive.entries()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(tensor.shape().rank()));
    for (std::size_t d : tensor.shape().dims()) put_u32(out, static_cast<std::uint32_t>(d));
    out.push_back(kDtypeF32);
    for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

void validate(const Architecture& arch, const WeightArchive& weights) {
  for (const LayerSpec& layer : arch.layers) {
    if (!layer.has_weights()) continue;
    const std::pair<std::string, Shape> expected[] = {
        {layer.weight_key(), layer.weight_shape()},
        {layer.bias_key(), layer.bias_shape()},
    };
    for (const auto& [key, shape] : expected) {
      const Tensor* t = weights.find(key);
      if (t == nullptr) {
        throw ValidationError("layer '" + layer.name + "': missing weight entry '" + key +
                              "' (expected shape " + shape.to_string() + ")");
      }
      if (t->shape() != shape) {
        throw ValidationError("layer '" + layer.name + "': entry '" + key + "' has shape " +
                              t->shape().to_string() + ", expected " + shape.to_string());
      }
    }
  }
}

std::size_t argmax(std::span<const float> values) {
  return static_cast<std::size_t>(
      std::distance(values.begin(), std::max_element(values.begin(), values.end())));
}

std::vector<std::size_t> Prediction::top(std::size_t n) const {
  std::vector<std::size_t> order(probabilities.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probabilities[a] > probabilities[b];
  });
  order.resize(std::min(n, order.size()));
  return order;
}

ForwardResult forward_trace(const Architecture& arch, const WeightArchive& weights,
                            const Tensor& input) {
  if (input.shape() != arch.input_shape) {
    throw ShapeError("input shape " + input.shape().to_string() +
                     " does not match the architecture input " +
                     arch.input_shape.to_string());
  }
  ForwardResult result;
  ActivationTrace& trace = result.trace;
  trace.input = input;
  trace.layers.reserve(arch.layers.size());

  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& layer = arch.layers[l];
    const Tensor& in = trace.input_of(l);
    LayerTrace record;
    switch (layer.kind) {
      case LayerKind::kConv2d:
        record.z = conv2d(in, weights.at(layer.weight_key()), weights.at(layer.bias_key()),
                          layer.conv);
        break;
      case LayerKind::kMaxPool: {
        MaxPoolResult pooled = maxpool2d(in, layer.pool);
        record.pool_input = in;
        record.z = std::move(pooled.pooled);
        record.switches = std::move(pooled.switches);
        break;
      }
      case LayerKind::kFlatten:
        record.z = in.reshaped(Shape{in.size()});
        break;
      case LayerKind::kDense:
        record.z = affine(weights.at(layer.weight_key()), weights.at(layer.bias_key()), in);
        break;
    }
    switch (layer.activation) {
      case Activation::kNone: record.a = record.z; break;
      case Activation::kRelu: record.a = relu(record.z); break;
      case Activation::kSoftmax: record.a = softmax(record.z); break;
    }
    trace.layers.push_back(std::move(record));
  }

  trace.probabilities = trace.layers.back().a;
  result.prediction.probabilities = trace.probabilities.values();
  result.prediction.top_class = argmax(trace.probabilities.data());
  return result;
}

void check_trace(const Architecture& arch, const ActivationTrace& trace) {
  if (trace.layers.size() != arch.layers.size()) {
    throw Error("trace has " + std::to_string(trace.layers.size()) +
                " layers, architecture has " + std::to_string(arch.layers.size()));
  }
  if (trace.input.shape() != arch.input_shape) {
    throw Error("trace input " + trace.input.shape().to_string() +
                " does not match architecture input " + arch.input_shape.to_string());
  }
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    if (trace.layers[l].a.shape() != arch.output_of(l)) {
      throw Error("trace of layer '" + arch.layers[l].name + "' has shape " +
                  trace.layers[l].a.shape().to_string() + ", expected " +
                  arch.output_of(l).to_string());
    }
  }
}

}  // namespace fbi
