// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. FBI_UPDATE_GOLDEN=1 rewrites the committed CLI golden files.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "fbi/baselines.hpp"
#include "fbi/fbi.hpp"
#include "fbi/image.hpp"
#include "fbi/ops.hpp"
#include "test_support.hpp"

namespace {

using namespace fbi;
using fbi::testing::random_tensor;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

using Seconds = std::chrono::duration<double>;

// |<conv(x), y> - <x, conv^T(y)>| over random shapes, weights and geometries,
// padding up to kernel - 1.
Outcome adjointness() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937 rng(2024);
  std::uniform_int_distribution<long> channels(1, 6);
  std::uniform_int_distribution<long> kernel(1, 5);
  std::uniform_int_distribution<long> stride(1, 3);
  std::uniform_int_distribution<long> outs(1, 10);
  double worst = 0;
  int cases = 0;
  while (cases < 200) {
    const long kh = kernel(rng);
    const long kw = kernel(rng);
    const long sh = stride(rng);
    const long sw = stride(rng);
    const long ph = std::uniform_int_distribution<long>(0, kh - 1)(rng);
    const long pw = std::uniform_int_distribution<long>(0, kw - 1)(rng);
    const long h = (outs(rng) - 1) * sh + kh - 2 * ph;
    const long w = (outs(rng) - 1) * sw + kw - 2 * pw;
    if (h < 1 || w < 1) continue;
    const auto u = [](long v) { return static_cast<std::size_t>(v); };
    const ConvGeometry g{{u(kh), u(kw)}, {u(sh), u(sw)}, {u(ph), u(pw)}};
    const Shape in{u(channels(rng)), u(h), u(w)};
    const Tensor weight = random_tensor(Shape{u(channels(rng)), in[0], u(kh), u(kw)}, rng);
    const Tensor x = random_tensor(in, rng);
    const Tensor fx = conv2d(x, weight, Tensor(Shape{weight.shape()[0]}), g);
    const Tensor y = random_tensor(fx.shape(), rng);
    const Tensor ty = conv2d_transpose_flipped(y, weight, g, in);
    const double lhs = fbi::testing::dot(fx, y);
    const double rhs = fbi::testing::dot(x, ty);
    const double scale = std::max({std::fabs(lhs), std::fabs(rhs), 1e-12});
    worst = std::max(worst, std::fabs(lhs - rhs) / scale);
    ++cases;
  }
  const double seconds = Seconds(std::chrono::steady_clock::now() - start).count();
  return {worst <= 1e-4 && seconds < 10.0,
          fmt("%.0f cases, max relative error %.2e (limit 1e-4), %.2f s (limit 10 s)", cases,
              worst, seconds)};
}

// Plain gradient against central differences of z_L[c] computed by the
// double-precision reference forward pass.
Outcome gradient_oracle() {
  std::mt19937 rng(77);
  int fixtures = 0;
  int rejected = 0;
  double worst = 0;
  while (fixtures < 3 && rejected < 100) {
    fbi::testing::RandomNetOptions o;
    o.height = o.width = 8;
    const fbi::testing::Net net = fbi::testing::random_net(rng, o);
    const Tensor x = random_tensor(net.arch.input_shape, rng);
    const std::size_t c = static_cast<std::size_t>(fixtures) % o.classes;
    const double h = 1e-3;
    const std::vector<double> base = fbi::testing::to_double(x);
    const auto ref = fbi::testing::reference_forward(net.arch, net.weights, base);
    std::vector<double> fd(base.size());
    bool stable = true;
    for (std::size_t i = 0; i < base.size() && stable; ++i) {
      std::vector<double> plus = base;
      std::vector<double> minus = base;
      plus[i] += h;
      minus[i] -= h;
      const auto rp = fbi::testing::reference_forward(net.arch, net.weights, plus);
      const auto rm = fbi::testing::reference_forward(net.arch, net.weights, minus);
      // A kink inside [x-h, x+h] makes the difference quotient meaningless.
      stable = rp.pattern == ref.pattern && rm.pattern == ref.pattern;
      fd[i] = (rp.z.back()[c] - rm.z.back()[c]) / (2 * h);
    }
    if (!stable) {
      ++rejected;
      continue;
    }
    const auto fwd = forward_trace(net.arch, net.weights, x);
    const SaliencyMap s = backward_pass(fwd.trace, net.arch, net.weights, c, ReluRule::kPlain);
    double peak = 0;
    for (double v : fd) peak = std::max(peak, std::fabs(v));
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double scale = std::max(std::fabs(fd[i]), 1e-3 * peak);
      worst = std::max(worst, std::fabs(s.values[i] - fd[i]) / scale);
    }
    ++fixtures;
  }
  return {fixtures == 3 && worst <= 1e-3,
          fmt("%.0f fixtures (%.0f rejected for kinks within h), max relative error %.2e "
              "(limit 1e-3)",
              fixtures, rejected, worst)};
}

Outcome fbi_degenerate(const fbi::testing::Net& tiny, const Tensor& tiny_input) {
  std::mt19937 rng(5);
  bool ok = true;
  std::string failures;

  // tau -> infinity on random fixtures and the trained one
  std::size_t worst_support = 0;
  for (int trial = 0; trial <= 10; ++trial) {
    fbi::testing::Net net;
    Tensor x;
    if (trial == 10) {
      net = tiny;
      x = tiny_input;
    } else {
      net = fbi::testing::random_net(rng);
      x = random_tensor(net.arch.input_shape, rng);
    }
    const auto fwd = forward_trace(net.arch, net.weights, x);
    FbiConfig cfg;
    cfg.tau = std::numeric_limits<float>::infinity();
    for (std::size_t c = 0; c < net.arch.num_classes(); ++c) {
      worst_support = std::max(
          worst_support, explain_fbi(fwd.trace, net.arch, net.weights, c, cfg).support_size());
    }
  }
  if (worst_support != 0) {
    ok = false;
    failures += " tau=inf support " + std::to_string(worst_support) + ";";
  }

  // support nesting over the tau grid, elementwise and end to end
  const float grid[] = {0, 0.1f, 1, 10, 100};
  int nesting_violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor a = random_tensor(Shape{128}, rng, -30, 30);
    const Tensor ahat = random_tensor(Shape{128}, rng, -30, 30);
    Tensor prev = fb_mask(a, ahat, grid[0]);
    for (float tau : grid) {
      const Tensor m = fb_mask(a, ahat, tau);
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] != 0.0f && (prev[i] == 0.0f || m[i] != ahat[i])) ++nesting_violations;
      }
      prev = m;
    }
  }
  for (int trial = 0; trial < 10; ++trial) {
    const fbi::testing::Net net = trial == 0 ? tiny : fbi::testing::random_net(rng);
    const Tensor x = trial == 0 ? tiny_input : random_tensor(net.arch.input_shape, rng, -2, 2);
    const auto fwd = forward_trace(net.arch, net.weights, x);
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (float tau : grid) {
      FbiConfig cfg;
      cfg.tau = tau;
      const std::size_t n =
          explain_fbi(fwd.trace, net.arch, net.weights, fwd.prediction.top_class, cfg)
              .support_size();
      if (n > prev) ++nesting_violations;
      prev = n;
    }
  }
  if (nesting_violations != 0) {
    ok = false;
    failures += " " + std::to_string(nesting_violations) + " nesting violations;";
  }

  // exact map counts
  int count_violations = 0;
  std::uniform_int_distribution<std::size_t> cdist(1, 64);
  for (float f : {0.25f, 0.5f, 1.0f}) {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t channels = cdist(rng);
      const Tensor in = random_tensor(Shape{channels, 2, 3}, rng, 0.01f, 1);
      const Tensor out = select_top_maps(in, f);
      std::size_t kept = 0;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        bool any = false;
        for (std::size_t i = 0; i < 6; ++i) any |= out[ch * 6 + i] != 0.0f;
        kept += any;
      }
      const auto want = static_cast<std::size_t>(std::ceil(static_cast<double>(f) * channels));
      if (kept != want) ++count_violations;
    }
  }
  if (count_violations != 0) {
    ok = false;
    failures += " " + std::to_string(count_violations) + " wrong map counts;";
  }
  return {ok, ok ? std::string("tau=inf empty on 11 fixtures; nesting exact on grid "
                               "{0,0.1,1,10,100}; ceil(f*C) maps kept for f in {0.25,0.5,1}")
                 : failures};
}

// Overlap-count mean computed by gathering, for each input position, every
// window that covers it.
Tensor brute_force_mean(const Shape& in, const Tensor& pooled, const PoolGeometry& g) {
  Tensor out(in);
  for (std::size_t c = 0; c < in[0]; ++c) {
    for (std::size_t y = 0; y < in[1]; ++y) {
      for (std::size_t x = 0; x < in[2]; ++x) {
        float sum = 0;
        unsigned count = 0;
        for (std::size_t py = 0; py < pooled.shape()[1]; ++py) {
          for (std::size_t px = 0; px < pooled.shape()[2]; ++px) {
            if (y < py * g.stride.h || y >= py * g.stride.h + g.kernel.h) continue;
            if (x < px * g.stride.w || x >= px * g.stride.w + g.kernel.w) continue;
            sum += pooled.at(c, py, px);
            ++count;
          }
        }
        out.at(c, y, x) = count > 1 ? sum / static_cast<float>(count) : sum;
      }
    }
  }
  return out;
}

Outcome unpool_invariants() {
  std::mt19937 rng(99);
  std::uniform_int_distribution<std::size_t> kdist(1, 3);
  std::uniform_int_distribution<std::size_t> odist(1, 5);
  std::uniform_int_distribution<std::size_t> cdist(1, 3);
  int overlap_cases = 0;
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    PoolGeometry g{{kdist(rng), kdist(rng)}, {0, 0}};
    g.stride.h = std::uniform_int_distribution<std::size_t>(1, g.kernel.h + 1)(rng);
    g.stride.w = std::uniform_int_distribution<std::size_t>(1, g.kernel.w + 1)(rng);
    if (trial % 4 == 0) g = {{2, 2}, {1, 1}};
    const bool overlap = g.stride.h < g.kernel.h || g.stride.w < g.kernel.w;
    overlap_cases += overlap;
    const std::size_t ho = odist(rng);
    const std::size_t wo = odist(rng);
    const Shape in{cdist(rng), (ho - 1) * g.stride.h + g.kernel.h,
                   (wo - 1) * g.stride.w + g.kernel.w};
    // Even trials use relu-like nonnegative inputs; odd ones signed inputs.
    const Tensor pool_input =
        random_tensor(in, rng, trial % 2 == 0 ? 0.0f : -1.0f, 1.0f);
    Tensor pooled = random_tensor(Shape{in[0], ho, wo}, rng, -1, 1);
    for (std::size_t i = 0; i < pooled.size(); i += 3) pooled[i] = 0;
    const Tensor rep = unpool_replicate(in, pooled, g);
    const Tensor out = unpool_adjoint(pool_input, pooled, g);
    const Tensor oracle = brute_force_mean(in, pooled, g);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (rep[i] != oracle[i]) ++violations;
      if (!(out[i] <= rep[i])) ++violations;
      // Silent positions are zeroed rather than bounded by a negative input.
      if (rep[i] == 0.0f ? out[i] != 0.0f : !(out[i] <= pool_input[i])) ++violations;
    }
  }
  return {violations == 0 && overlap_cases > 0,
          fmt("100 cases (%.0f with overlapping windows), %.0f pointwise violations", overlap_cases,
              violations)};
}

double cosine(const Tensor& a, const Tensor& b) {
  const double na = std::sqrt(fbi::testing::dot(a, a));
  const double nb = std::sqrt(fbi::testing::dot(b, b));
  if (na == 0 || nb == 0) return 0;
  return fbi::testing::dot(a, b) / (na * nb);
}

struct Heldout {
  std::string file;
  std::size_t y, x, h, w;
};

std::vector<Heldout> heldout_list(const nlohmann::json& meta) {
  std::vector<Heldout> out;
  for (const auto& e : meta.at("heldout")) {
    const auto& b = e.at("box");
    out.push_back({e.at("file").get<std::string>(), b[0].get<std::size_t>(),
                   b[1].get<std::size_t>(), b[2].get<std::size_t>(), b[3].get<std::size_t>()});
  }
  return out;
}

Tensor load_input(const fbi::testing::Net& net, const std::string& path) {
  return preprocess(load_pnm_file(path), net.arch.input_mean, net.arch.input_shape);
}

Outcome deconvnet_proximity(const fbi::testing::Net& net, const std::vector<Heldout>& images) {
  std::mt19937 rng(1234);
  const std::size_t flatten_layer = [&] {
    for (std::size_t l = 0; l < net.arch.layers.size(); ++l) {
      if (net.arch.layers[l].kind == LayerKind::kFlatten) return l;
    }
    return std::size_t{0};
  }();
  const std::size_t channels = net.arch.input_of(flatten_layer)[0];
  std::vector<std::size_t> perm(channels);
  std::iota(perm.begin(), perm.end(), 0);

  int passed = 0;
  double min_margin = std::numeric_limits<double>::infinity();
  double mean_sim = 0;
  const std::size_t n = std::min<std::size_t>(20, images.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor x = load_input(net, fbi::testing::tiny_dir() + "/" + images[i].file);
    const auto fwd = forward_trace(net.arch, net.weights, x);
    const std::size_t c = fwd.prediction.top_class;
    FbiConfig cfg;
    cfg.tau = 0;
    cfg.top_fraction = 1;
    cfg.bias_adjoint = false;
    const Tensor f = explain_fbi(fwd.trace, net.arch, net.weights, c, cfg).values;
    const Tensor d = explain_deconvnet(fwd.trace, net.arch, net.weights, c).values;
    const double sim = cosine(f, d);
    std::vector<double> null;
    for (int s = 0; s < 200; ++s) {
      std::shuffle(perm.begin(), perm.end(), rng);
      BackwardOptions opts;
      opts.channel_permutation = perm;
      const Tensor p =
          backward_pass_traced(fwd.trace, net.arch, net.weights, c, ReluRule::kDeconvnet, opts)
              .saliency.values;
      null.push_back(cosine(f, p));
    }
    std::sort(null.begin(), null.end());
    // nearest-rank 99th percentile
    const double p99 = null[static_cast<std::size_t>(std::ceil(0.99 * 200)) - 1];
    passed += sim > p99;
    min_margin = std::min(min_margin, sim - p99);
    mean_sim += sim / static_cast<double>(n);
  }
  return {passed == static_cast<int>(n),
          fmt("%.0f/%.0f images above the permutation-null 99th percentile, mean cosine %.3f, "
              "smallest margin %.3f",
              passed, static_cast<double>(n), mean_sim, min_margin)};
}

Outcome localization(const fbi::testing::Net& net, const nlohmann::json& meta,
                     const std::vector<Heldout>& images) {
  FbiConfig cfg;
  cfg.tau = meta.at("tau_effective").get<float>();
  cfg.top_fraction = 0.5f;
  const double baseline = 16.0 / 256.0;
  int good = 0;
  double total_ratio = 0;
  for (const Heldout& h : images) {
    const Tensor x = load_input(net, fbi::testing::tiny_dir() + "/" + h.file);
    const auto fwd = forward_trace(net.arch, net.weights, x);
    const SaliencyMap s = explain_fbi(fwd.trace, net.arch, net.weights, fwd.prediction.top_class,
                                      cfg);
    double inside = 0;
    double total = 0;
    const std::size_t width = s.values.shape()[2];
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      const double m = std::fabs(s.values[i]);
      const std::size_t y = (i / width) % s.values.shape()[1];
      const std::size_t xx = i % width;
      total += m;
      if (y >= h.y && y < h.y + h.h && xx >= h.x && xx < h.x + h.w) inside += m;
    }
    const double fraction = total > 0 ? inside / total : 0;
    good += fraction >= 2 * baseline;
    total_ratio += fraction / baseline;
  }
  const double share = static_cast<double>(good) / static_cast<double>(images.size());
  return {images.size() == 50 && share >= 0.8,
          fmt("tau %.3g: %.0f/50 images with in-box mass >= 2x area share (need 40), mean "
              "ratio %.2fx",
              cfg.tau, good, total_ratio / static_cast<double>(images.size()))};
}

struct GoldenCase {
  std::vector<std::string> args;  // without --out
  std::string golden;             // file name under golden/
  bool to_stdout;
};

Outcome cli_golden() {
  namespace fs = std::filesystem;
  const std::string tiny = fbi::testing::tiny_dir();
  const bool update = std::getenv("FBI_UPDATE_GOLDEN") != nullptr;
  const fs::path tmp = fs::temp_directory_path() / "fbi_acceptance_golden";
  fs::create_directories(tmp);
  const std::vector<std::string> model = {"--arch", tiny + "/arch.json", "--weights",
                                          tiny + "/weights.fbiw", "--image",
                                          tiny + "/images/square.pgm"};
  std::vector<GoldenCase> cases;
  auto with = [&](std::string sub, std::vector<std::string> extra) {
    std::vector<std::string> a{std::move(sub)};
    a.insert(a.end(), model.begin(), model.end());
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  cases.push_back({with("predict", {}), "predict_square.txt", true});
  for (const char* m : {"fbi", "guided", "deconvnet"}) {
    cases.push_back({with("explain", {"--method", m}), std::string("explain_") + m + ".pgm", false});
  }
  cases.push_back({with("explain", {"--tau", "0.1"}), "explain_fbi_tau0.1.pgm", false});
  cases.push_back({with("explain", {"--tau", "0.1", "--overlay"}), "overlay_fbi_tau0.1.ppm", false});

  int mismatches = 0;
  std::string detail;
  for (const GoldenCase& gc : cases) {
    std::vector<std::uint8_t> runs[2];
    for (int r = 0; r < 2; ++r) {
      std::ostringstream out;
      std::ostringstream err;
      std::vector<std::string> args = gc.args;
      const std::string out_path = (tmp / ("run" + std::to_string(r) + "_" + gc.golden)).string();
      if (!gc.to_stdout) args.insert(args.end(), {"--out", out_path});
      if (fbi::cli::run(args, out, err) != 0) {
        ++mismatches;
        detail += " " + gc.golden + " failed: " + err.str();
        continue;
      }
      if (gc.to_stdout) {
        const std::string s = out.str();
        runs[r].assign(s.begin(), s.end());
      } else {
        runs[r] = fbi::testing::read_file(out_path);
      }
    }
    const std::string golden_path = tiny + "/golden/" + gc.golden;
    if (update) {
      fs::create_directories(tiny + "/golden");
      std::ofstream(golden_path, std::ios::binary)
          .write(reinterpret_cast<const char*>(runs[0].data()),
                 static_cast<std::streamsize>(runs[0].size()));
    }
    if (runs[0] != runs[1]) {
      ++mismatches;
      detail += " " + gc.golden + " differs between runs;";
    } else if (!fs::exists(golden_path) || fbi::testing::read_file(golden_path) != runs[0]) {
      ++mismatches;
      detail += " " + gc.golden + " differs from golden;";
    }
  }
  fs::remove_all(tmp);
  return {mismatches == 0, mismatches == 0 ? std::to_string(cases.size()) +
                                                 " outputs byte-identical across two runs and "
                                                 "equal to the committed golden files"
                                           : detail};
}

Outcome defaults() {
  fbi::cli::CliOptions options;
  auto app = fbi::cli::make_app(options);
  CLI::App* explain = app->get_subcommand("explain");
  const std::string tau = explain->get_option("--tau")->get_default_str();
  const std::string frac = explain->get_option("--top-frac")->get_default_str();
  const FbiConfig cfg;
  const bool ok = std::stof(tau) == 10.0f && std::stof(frac) == 0.5f && options.tau == 10.0f &&
                  options.top_frac == 0.5f && cfg.tau == 10.0f && cfg.top_fraction == 0.5f;
  return {ok, "--tau default '" + tau + "', --top-frac default '" + frac + "'"};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
    failures += !o.pass;
  };

  const fbi::testing::Net tiny = fbi::testing::load_tiny_fixture();
  const nlohmann::json meta =
      nlohmann::json::parse(fbi::testing::read_text(fbi::testing::tiny_dir() + "/meta.json"));
  const std::vector<Heldout> heldout = heldout_list(meta);
  const Tensor square = load_input(tiny, fbi::testing::tiny_dir() + "/images/square.pgm");

  report("adjointness", adjointness);
  report("gradient-oracle", gradient_oracle);
  report("fbi-degenerate", [&] { return fbi_degenerate(tiny, square); });
  report("unpool-invariants", unpool_invariants);
  report("deconvnet-proximity", [&] { return deconvnet_proximity(tiny, heldout); });
  report("localization", [&] { return localization(tiny, meta, heldout); });
  report("cli-golden", cli_golden);
  report("cli-defaults", defaults);
  return failures == 0 ? 0 : 1;
}
