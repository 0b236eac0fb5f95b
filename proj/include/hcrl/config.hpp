#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hcrl/envs.hpp"
#include "hcrl/oracle.hpp"
#include "hcrl/trainer.hpp"

namespace hcrl {

struct DataSection {
  Tier tier = Tier::kRandom;
  std::size_t n = 5000;
  std::uint64_t seed = 0;
  std::string path = "dataset.orld";
};

struct OracleSection {
  TheoremSuiteSettings suite{};  // suite.jobs comes from --jobs, not from the file
  std::string mode = "oracle";    // sweep-delta: "oracle" or "empirical"
};

struct OutputSection {
  std::string root = "runs";
  std::string dir;          // explicit run directory; empty means <root>/<timestamp>-<command>
  bool cell_dump = false;   // train: also write cells.csv
};

struct EvalSection {
  std::string checkpoint;
  int n_episodes = 10;
  std::uint64_t seed = 0;
};

/// Every knob of every command. Sections map one-to-one onto the config
/// file's [env], [data], [train], [oracle], [output] and [eval] tables.
struct RunConfig {
  PointMassEnv env{};
  DataSection data{};
  Td3BcConfig train{};
  OracleSection oracle{};
  OutputSection output{};
  EvalSection eval{};
};

/// One settable key, addressed as "section.key".
struct ConfigField {
  std::string name;
  std::string doc;
  void (*set)(RunConfig&, const std::vector<std::string>&);
  std::string (*get)(const RunConfig&);
  bool list = false;  // takes a bracketed list in files, a comma list on the command line
};

const std::vector<ConfigField>& config_fields();
const ConfigField* find_config_field(std::string_view name);

/// Sets one key. Throws ConfigError for unknown keys and malformed values.
void apply_setting(RunConfig& cfg, std::string_view name, const std::vector<std::string>& values);

/// Splits a command-line value: "[1, 2]", "1,2" and "1 2" all give {"1", "2"};
/// "" and "[]" give {}.
std::vector<std::string> split_list_value(std::string_view text);

/// Applies every key of a TOML-subset file; unknown keys are rejected.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
void apply_config_text(RunConfig& cfg, std::string_view text);

/// Fully resolved config in the same file format, one documented key per
/// line. A non-empty `sections` restricts the output to those tables.
std::string render_config(const RunConfig& cfg, std::span<const std::string_view> sections = {});

/// Throws ConfigError when any section is out of range.
void validate_config(const RunConfig& cfg);

}  // namespace hcrl
