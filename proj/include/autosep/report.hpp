#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "autosep/evaluation.hpp"
#include "autosep/optimizer.hpp"

namespace autosep {

/// Best and mean sampled score over the retained prompts P_t.
struct IterationSummary {
  int iteration = 0;
  Fingerprint best;
  double best_score = 0.0;
  double mean_score = 0.0;
  int retained = 0;
};

/// Uses the score each retained prompt held at iteration t.
std::vector<IterationSummary> iteration_summaries(const RunState& state);

/// One row of eval_results.csv.
struct EvalRow {
  std::string method;
  std::uint64_t seed = 0;
  Fingerprint prompt;
  double accuracy = 0.0;
  int correct = 0;
  int total = 0;
  int abstained = 0;

  static EvalRow from(const EvalResult& r, const Fingerprint& prompt);
};

std::string format_eval_csv(const std::vector<EvalRow>& rows);
std::vector<EvalRow> parse_eval_csv(std::string_view text);

/// Class accuracy of the best retained prompt at every iteration.
struct TrajectoryRow {
  int iteration = 0;
  Fingerprint prompt;
  double best_score = 0.0;
  double accuracy = 0.0;
};

std::vector<TrajectoryRow> compute_trajectory(Client& client, const Dataset& eval_set, const TaskSpec& task,
                                              const RunState& state, const EvalOptions& options);
std::string format_trajectory_csv(const std::vector<TrajectoryRow>& rows);
std::vector<TrajectoryRow> parse_trajectory_csv(std::string_view text);

struct MethodAggregate {
  std::string method;
  int seeds = 0;
  double mean = 0.0;
  /// Sample standard deviation; 0 for a single seed.
  double sd = 0.0;
};

/// Per-method mean and sd of accuracy, methods in first-seen order.
std::vector<MethodAggregate> aggregate(const std::vector<EvalRow>& rows);

/// Reads the latest checkpoint plus eval_results.csv / trajectory.csv when
/// present and writes iterations.csv, correlation.csv, diversity.csv,
/// eval_summary.csv and summary.txt. Returns the summary text.
std::string write_report(const std::filesystem::path& run_dir);

}  // namespace autosep
