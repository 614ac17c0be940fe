#pragma once

// The `rotlab` experiment runner.

#include <iosfwd>
#include <string>
#include <vector>

namespace rotlab::cli {

/// One top-level key of a config file.
struct ConfigEntry {
  std::string key;                  ///< normalized: underscores become dashes
  std::vector<std::string> tokens;  ///< command-line form, e.g. {"--dim", "8"}
  int line = 0;
};

struct ExperimentConfig {
  std::string path;
  std::vector<ConfigEntry> entries;
};

/// Reads a JSON object whose keys are long option names. An empty file is an
/// empty config. Throws ConfigError naming the key (and line) on bad input.
ExperimentConfig load_config(const std::string& path);

/// Entry point. Exit status: 0 success, 1 I/O failure, 2 bad arguments or
/// config, 3 numerical failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

std::vector<std::string> subcommands();

}  // namespace rotlab::cli
