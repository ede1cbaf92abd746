#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "autosep/backend.hpp"
#include "autosep/core.hpp"
#include "autosep/http_backend.hpp"
#include "autosep/mock_backend.hpp"

namespace autosep {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitBackend = 3,
  kExitData = 4,
};

struct BackendSettings {
  std::string kind = "mock";  // "mock" | "http"
  std::optional<MockWorld> world;
  HttpBackendConfig http;
};

/// Declarative run description loaded from a JSON file. Relative paths are
/// resolved against the file's directory.
struct CliConfig {
  TaskSpec task;
  std::filesystem::path optimize_manifest;
  std::filesystem::path eval_manifest;
  BackendSettings backend;
  RunConfig run;
  /// False when the file leaves minibatch_size unset; it then defaults to
  /// min(60, n) once n is known.
  bool minibatch_explicit = false;
  int m_vote = 5;
  int m_context = 3;
  std::vector<std::uint64_t> eval_seeds = {0};
  RetryPolicy retry;
  std::optional<std::filesystem::path> templates_dir;
  /// Optional override of the built-in initial description prompt.
  std::optional<std::string> initial_prompt;

  /// Every violated constraint, including RunConfig's and TaskSpec's.
  std::vector<std::string> violations() const;
};

/// Throws ConfigError on malformed JSON or missing required keys.
CliConfig load_cli_config(const std::filesystem::path& file);

std::unique_ptr<Backend> make_backend(const BackendSettings& settings);

/// Entry point of the `autosep` tool; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace autosep
