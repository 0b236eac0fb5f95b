#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "hcrl/config.hpp"

namespace hcrl {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitTheoremViolation = 1,
  kExitUsage = 2,  // bad flags, bad config, refused overwrite
  kExitData = 3,   // unreadable or malformed input files, dimension mismatches
  kExitNumeric = 4,
  kExitInternal = 5,
};

/// Environment variable that overrides output.root.
inline constexpr const char* kOutputRootEnv = "HCRL_OUTPUT_ROOT";

/// Runs one subcommand. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Creates the run directory for `command`: output.dir when set, otherwise
/// a fresh <root>/<YYYYmmdd-HHMMSS>-<command>[-k]. An existing non-empty
/// explicit directory is only replaced when `force` is set.
std::filesystem::path make_run_dir(const RunConfig& cfg, std::string_view command, bool force);

struct PlotDataResult {
  std::string csv;                    // run_id,epoch,metric,value
  std::vector<std::string> warnings;  // one per skipped directory
};

/// Long-format merge of the metrics.csv files of `run_dirs`. Tokens are
/// copied verbatim; unreadable directories are skipped with a warning.
PlotDataResult collect_plot_data(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace hcrl
