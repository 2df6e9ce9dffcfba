#pragma once

#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fbi/fbi.hpp"
#include "fbi/saliency.hpp"

namespace CLI {
class App;
}

namespace fbi::cli {

enum class Subcommand { kNone, kPredict, kExplain };

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 2,
  kExitBadClass = 3,
};

struct CliOptions {
  Subcommand subcommand = Subcommand::kNone;
  std::string arch_path;
  std::string weights_path;
  std::string image_path;
  Method method = Method::kFbi;
  float tau = FbiConfig::kDefaultTau;
  float top_frac = FbiConfig::kDefaultTopFraction;
  std::optional<long long> class_index;
  std::string out_path;
  bool overlay = false;
  bool no_bias_adjoint = false;
  std::string raw_out_path;
};

/// Parser bound to `options`; the option defaults are the documented CLI
/// defaults and can be read back via CLI11's introspection.
std::unique_ptr<CLI::App> make_app(CliOptions& options);

int cmd_predict(const CliOptions& options, std::ostream& out, std::ostream& err);
int cmd_explain(const CliOptions& options, std::ostream& out, std::ostream& err);

/// Parse and dispatch. Returns the process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fbi::cli
