#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <CLI11.hpp>

#include "fbi/baselines.hpp"
#include "fbi/image.hpp"
#include "fbi/model.hpp"

namespace fbi::cli {
namespace {

struct LoadedModel {
  Architecture arch;
  WeightArchive weights;
  ImageU8 image;
  Tensor input;
};

LoadedModel load_inputs(const CliOptions& options) {
  LoadedModel m;
  m.arch = load_architecture_file(options.arch_path);
  m.weights = load_weights_file(options.weights_path);
  validate(m.arch, m.weights);
  m.image = load_pnm_file(options.image_path);
  m.input = preprocess(m.image, m.arch.input_mean, m.arch.input_shape);
  return m;
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

void add_model_options(CLI::App& sub, CliOptions& o) {
  sub.add_option("--arch", o.arch_path, "Architecture description (JSON)")->required();
  sub.add_option("--weights", o.weights_path, "FBIW weight archive")->required();
  sub.add_option("--image", o.image_path, "Input image (binary PGM/PPM)")->required();
}

}  // namespace

std::unique_ptr<CLI::App> make_app(CliOptions& o) {
  auto app = std::make_unique<CLI::App>(
      "Forward-backward interpretability for sequential CNNs", "fbi");
  app->require_subcommand(1);

  CLI::App* predict = app->add_subcommand("predict", "Print the top-5 classes");
  add_model_options(*predict, o);
  predict->callback([&o] { o.subcommand = Subcommand::kPredict; });

  CLI::App* explain = app->add_subcommand("explain", "Render a saliency map");
  add_model_options(*explain, o);
  explain
      ->add_option_function<std::string>(
          "--method",
          [&o](const std::string& name) {
            o.method = name == "guided"      ? Method::kGuided
                       : name == "deconvnet" ? Method::kDeconvnet
                                             : Method::kFbi;
          },
          "fbi, guided or deconvnet")
      ->check(CLI::IsMember({"fbi", "guided", "deconvnet"}))
      ->default_str("fbi");
  explain->add_option("--tau", o.tau, "Forward-backward mask threshold")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  explain->add_option("--top-frac", o.top_frac, "Fraction of top feature maps kept")
      ->check(CLI::Validator(
          [](std::string& s) -> std::string {
            float v = 0.0f;
            if (!CLI::detail::lexical_cast(s, v) || !(v > 0.0f && v <= 1.0f)) {
              return "must lie in (0, 1]";
            }
            return {};
          },
          "(0,1]"))
      ->capture_default_str();
  explain->add_option("--class", o.class_index, "Class to explain (default: top-1)");
  explain->add_option("--out", o.out_path, "Output PGM (or PPM with --overlay)")->required();
  explain->add_flag("--overlay", o.overlay, "Render over the input image as PPM");
  explain->add_flag("--no-bias-adjoint", o.no_bias_adjoint,
                    "Do not subtract conv biases in the fbi backward walk");
  explain->add_option("--raw-out", o.raw_out_path,
                      "Also write the raw saliency tensor as an FBIW archive");
  explain->callback([&o] { o.subcommand = Subcommand::kExplain; });
  return app;
}

int cmd_predict(const CliOptions& options, std::ostream& out, std::ostream& err) {
  try {
    const LoadedModel m = load_inputs(options);
    const ForwardResult fwd = forward_trace(m.arch, m.weights, m.input);
    for (std::size_t c : fwd.prediction.top(5)) {
      char line[64];
      std::snprintf(line, sizeof line, "%zu\t%.6f\n", c,
                    static_cast<double>(fwd.prediction.probabilities[c]));
      out << line;
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "fbi predict: " << e.what() << '\n';
    return kExitError;
  }
}

int cmd_explain(const CliOptions& options, std::ostream& out, std::ostream& err) {
  (void)out;
  try {
    const LoadedModel m = load_inputs(options);
    const ForwardResult fwd = forward_trace(m.arch, m.weights, m.input);

    std::size_t target = fwd.prediction.top_class;
    if (options.class_index) {
      const long long requested = *options.class_index;
      if (requested < 0 || static_cast<std::size_t>(requested) >= m.arch.num_classes()) {
        err << "fbi explain: class " << requested << " out of range [0, "
            << m.arch.num_classes() << ")\n";
        return kExitBadClass;
      }
      target = static_cast<std::size_t>(requested);
    }

    SaliencyMap saliency;
    switch (options.method) {
      case Method::kGuided:
        saliency = explain_guided(fwd.trace, m.arch, m.weights, target);
        break;
      case Method::kDeconvnet:
        saliency = explain_deconvnet(fwd.trace, m.arch, m.weights, target);
        break;
      case Method::kPlain:
        saliency = backward_pass(fwd.trace, m.arch, m.weights, target, ReluRule::kPlain);
        break;
      case Method::kFbi: {
        FbiConfig config;
        config.tau = options.tau;
        config.top_fraction = options.top_frac;
        config.bias_adjoint = !options.no_bias_adjoint;
        saliency = explain_fbi(fwd.trace, m.arch, m.weights, target, config);
        break;
      }
    }

    const ImageU8 rendered =
        options.overlay ? render_overlay(saliency, m.image) : render_grayscale(saliency);
    save_pnm_file(rendered, options.out_path);
    if (!options.raw_out_path.empty()) {
      WeightArchive raw;
      raw.insert("saliency", saliency.values);
      write_bytes(options.raw_out_path, save_weights(raw));
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "fbi explain: " << e.what() << '\n';
    return kExitError;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CliOptions options;
  auto app = make_app(options);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app->parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app->exit(e, out, err);
    return code == 0 ? kExitOk : kExitError;
  }
  switch (options.subcommand) {
    case Subcommand::kPredict: return cmd_predict(options, out, err);
    case Subcommand::kExplain: return cmd_explain(options, out, err);
    case Subcommand::kNone: break;
  }
  err << app->help();
  return kExitError;
}

}  // namespace fbi::cli
