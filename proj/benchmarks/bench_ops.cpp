#include <random>

#include <benchmark/benchmark.h>

#include "fbi/baselines.hpp"
#include "fbi/fbi.hpp"
#include "fbi/ops.hpp"

namespace {

fbi::Tensor random_tensor(fbi::Shape shape, std::mt19937& rng) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> values(shape.size());
  for (float& v : values) v = dist(rng);
  return fbi::Tensor(std::move(shape), std::move(values));
}

// VGG-like 3x3 layer: range(0) channels in and out, range(1) spatial extent.
void BM_Conv2d(benchmark::State& state) {
  std::mt19937 rng(1);
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  const fbi::Tensor x = random_tensor(fbi::Shape{c, hw, hw}, rng);
  const fbi::Tensor w = random_tensor(fbi::Shape{c, c, 3, 3}, rng);
  const fbi::Tensor b = random_tensor(fbi::Shape{c}, rng);
  const fbi::ConvGeometry geom{{3, 3}, {1, 1}, {1, 1}};
  for (auto _ : state) benchmark::DoNotOptimize(fbi::conv2d(x, w, b, geom));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(c * c * hw * hw * 9));
}
BENCHMARK(BM_Conv2d)->Args({16, 32})->Args({64, 56})->Args({128, 28});

void BM_ConvTransposeFlipped(benchmark::State& state) {
  std::mt19937 rng(2);
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  const fbi::Tensor g = random_tensor(fbi::Shape{c, hw, hw}, rng);
  const fbi::Tensor w = random_tensor(fbi::Shape{c, c, 3, 3}, rng);
  const fbi::ConvGeometry geom{{3, 3}, {1, 1}, {1, 1}};
  const fbi::Shape out{c, hw, hw};
  for (auto _ : state) benchmark::DoNotOptimize(fbi::conv2d_transpose_flipped(g, w, geom, out));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(c * c * hw * hw * 9));
}
BENCHMARK(BM_ConvTransposeFlipped)->Args({16, 32})->Args({64, 56});

void BM_MaxPool(benchmark::State& state) {
  std::mt19937 rng(3);
  const auto hw = static_cast<std::size_t>(state.range(0));
  const fbi::Tensor x = random_tensor(fbi::Shape{64, hw, hw}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(fbi::maxpool2d(x, {{2, 2}, {2, 2}}));
}
BENCHMARK(BM_MaxPool)->Arg(56)->Arg(112);

void BM_UnpoolAdjoint(benchmark::State& state) {
  std::mt19937 rng(4);
  const auto hw = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto s = static_cast<std::size_t>(state.range(2));
  const fbi::Tensor x = random_tensor(fbi::Shape{64, hw, hw}, rng);
  const fbi::PoolGeometry geom{{k, k}, {s, s}};
  const fbi::Tensor g = random_tensor(fbi::pool_output_shape(x.shape(), geom), rng);
  for (auto _ : state) benchmark::DoNotOptimize(fbi::unpool_adjoint(x, g, geom));
}
BENCHMARK(BM_UnpoolAdjoint)->Args({56, 2, 2})->Args({57, 3, 2});

// Whole-network explanation on a small VGG-style stack.
void BM_ExplainSmallNet(benchmark::State& state) {
  std::mt19937 rng(5);
  fbi::Architecture arch;
  arch.input_shape = fbi::Shape{3, 32, 32};
  auto conv = [](std::string name, std::size_t in, std::size_t out) {
    fbi::LayerSpec l;
    l.kind = fbi::LayerKind::kConv2d;
    l.name = std::move(name);
    l.activation = fbi::Activation::kRelu;
    l.in_channels = in;
    l.out_channels = out;
    l.conv = {{3, 3}, {1, 1}, {1, 1}};
    return l;
  };
  auto pool = [](std::string name) {
    fbi::LayerSpec l;
    l.kind = fbi::LayerKind::kMaxPool;
    l.name = std::move(name);
    return l;
  };
  arch.layers = {conv("c1", 3, 16), pool("p1"), conv("c2", 16, 32), pool("p2")};
  fbi::LayerSpec flat;
  flat.kind = fbi::LayerKind::kFlatten;
  flat.name = "flat";
  fbi::LayerSpec fc;
  fc.kind = fbi::LayerKind::kDense;
  fc.name = "fc";
  fc.activation = fbi::Activation::kSoftmax;
  fc.in_features = 32 * 8 * 8;
  fc.out_features = 10;
  arch.layers.push_back(flat);
  arch.layers.push_back(fc);
  fbi::finalize_architecture(arch);

  fbi::WeightArchive weights;
  for (const auto& layer : arch.layers) {
    if (!layer.has_weights()) continue;
    weights.insert(layer.weight_key(), random_tensor(layer.weight_shape(), rng));
    weights.insert(layer.bias_key(), random_tensor(layer.bias_shape(), rng));
  }
  const fbi::Tensor input = random_tensor(arch.input_shape, rng);
  const auto fwd = fbi::forward_trace(arch, weights, input);
  const bool fbi_method = state.range(0) == 0;
  for (auto _ : state) {
    if (fbi_method) {
      benchmark::DoNotOptimize(fbi::explain_fbi(fwd.trace, arch, weights, 0, {1.0f, 0.5f, true}));
    } else {
      benchmark::DoNotOptimize(fbi::explain_guided(fwd.trace, arch, weights, 0));
    }
  }
}
BENCHMARK(BM_ExplainSmallNet)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
