#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "autosep/backend.hpp"
#include "autosep/core.hpp"
#include "autosep/scoring.hpp"

namespace autosep {

/// A scored pair with V = 0 under `prompt_fingerprint`.
struct ErrorPair {
  std::string anchor_id;
  std::string other_id;
  std::string anchor_description;
  std::string other_description;
  int z = 0;
  Fingerprint prompt_fingerprint;
};

struct Reflection {
  Fingerprint prompt_fingerprint;
  std::vector<std::string> sampled_error_pair_ids;
  std::string critique;
};

/// One scoring event, as written to scores.csv.
struct ScoreRecord {
  int iteration = 0;
  Fingerprint fingerprint;
  int correct = 0;
  int pairs_evaluated = 0;

  double value() const { return pairs_evaluated ? static_cast<double>(correct) / pairs_evaluated : 0.0; }
  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

/// Archive entry: the prompt plus the outcome of its latest scoring.
struct CandidateRecord {
  PromptCandidate prompt;
  int correct = 0;
  int pairs_evaluated = 0;
  int scored_iter = 0;
  std::vector<InstancePair> pairs;

  double score() const { return pairs_evaluated ? static_cast<double>(correct) / pairs_evaluated : 0.0; }
  friend bool operator==(const CandidateRecord&, const CandidateRecord&) = default;
};

struct CandidatePool {
  int iteration = 0;
  /// P_t, best first.
  std::vector<Fingerprint> retained;
  /// Every candidate ever scored.
  std::map<Fingerprint, CandidateRecord> archive;

  friend bool operator==(const CandidatePool&, const CandidatePool&) = default;
};

struct RunState {
  RunConfig config;
  Fingerprint initial_prompt;
  CandidatePool pool;
  /// history[t] = P_t for t = 0 .. pool.iteration.
  std::vector<std::vector<Fingerprint>> history;
  std::vector<ScoreRecord> score_log;
  NegativeAssignment negatives;
  std::uint64_t ledger_next_seq = 0;

  const CandidateRecord& record(const Fingerprint& fp) const { return pool.archive.at(fp); }
  friend bool operator==(const RunState&, const RunState&) = default;
};

struct ScoredCandidate {
  Fingerprint fingerprint;
  double score = 0.0;
  int born_iter = 0;
};

/// The b best by score; ties go to the earlier born_iter, then the smaller
/// fingerprint. Returns exactly min(b, |candidates|), best first.
std::vector<ScoredCandidate> select_top_b(std::vector<ScoredCandidate> candidates, int b);

/// Critique of `prompt` given mismatched pairs; nullopt when the model
/// returned an empty critique twice.
std::optional<Reflection> reflect(Client& client, const TaskSpec& task, const PromptCandidate& prompt,
                                  const std::vector<ErrorPair>& errors, int max_errors, int iteration);

/// Revised prompt taken from the <START>..<END> block of the reply; nullopt
/// when no block was found after one retry.
std::optional<PromptCandidate> modify(Client& client, const TaskSpec& task, const PromptCandidate& prompt,
                                      const Reflection& reflection, const std::vector<ErrorPair>& errors,
                                      int iteration);

struct RunOptions {
  /// Continue from a checkpointed state instead of starting at p0.
  std::optional<RunState> resume;
  /// Called after every completed iteration t >= 1 (checkpoint hook).
  std::function<void(const RunState&)> on_iteration;
  /// Stop after this iteration even if N is larger.
  std::optional<int> stop_after;
};

struct RunResult {
  PromptCandidate best;
  double best_score = 0.0;
  RunState state;
};

/// Iterative reflect/modify beam search over description prompts, scored by
/// sampled instance-level retrieval. Never reads labels.
RunResult run_autosep(Client& client, const TaskSpec& task, const RunConfig& config, const Dataset& X,
                      const PromptCandidate& p0, RunOptions options = {});

}  // namespace autosep
