#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "autosep/optimizer.hpp"

namespace autosep {

inline constexpr int kCheckpointFormatVersion = 1;

void to_json(nlohmann::json& j, const InstancePair& p);
void from_json(const nlohmann::json& j, InstancePair& p);
void to_json(nlohmann::json& j, const CandidateRecord& r);
void from_json(const nlohmann::json& j, CandidateRecord& r);
void to_json(nlohmann::json& j, const ScoreRecord& r);
void from_json(const nlohmann::json& j, ScoreRecord& r);
void to_json(nlohmann::json& j, const RunState& s);
void from_json(const nlohmann::json& j, RunState& s);

/// Serialized checkpoint: format tag, version, SHA-256 of the body.
std::string serialize_checkpoint(const RunState& state);
/// Throws CheckpointError on a version mismatch, checksum mismatch or any
/// parse failure. Never returns a partially filled state.
RunState deserialize_checkpoint(std::string_view text);

void write_checkpoint(const std::filesystem::path& file, const RunState& state);
RunState read_checkpoint(const std::filesystem::path& file);

/// Layout of one optimization run:
///   config.snapshot, checkpoints/iter_t.state, candidates.jsonl, scores.csv,
///   queries.log, descriptions.jsonl, best_prompt.txt
class RunDirectory {
 public:
  explicit RunDirectory(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path config_snapshot() const { return root_ / "config.snapshot"; }
  std::filesystem::path checkpoints() const { return root_ / "checkpoints"; }
  std::filesystem::path checkpoint(int iteration) const;
  std::filesystem::path candidates() const { return root_ / "candidates.jsonl"; }
  std::filesystem::path scores() const { return root_ / "scores.csv"; }
  std::filesystem::path queries() const { return root_ / "queries.log"; }
  std::filesystem::path descriptions() const { return root_ / "descriptions.jsonl"; }
  std::filesystem::path best_prompt() const { return root_ / "best_prompt.txt"; }

  /// Highest-numbered checkpoint, if any.
  std::optional<std::filesystem::path> latest_checkpoint() const;
  /// Writes the iteration's checkpoint and rewrites the derived outputs.
  void save_iteration(const RunState& state) const;
  /// Rewrites candidates.jsonl, scores.csv and best_prompt.txt from `state`.
  void write_outputs(const RunState& state) const;

 private:
  std::filesystem::path root_;
};

std::string format_scores_csv(const RunState& state);
std::string format_candidates_jsonl(const RunState& state);

/// Fixed-point rendering used in every CSV so outputs are byte-stable.
std::string format_value(double v);

}  // namespace autosep
