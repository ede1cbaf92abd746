#include "autosep/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <regex>

#include "autosep/errors.hpp"
#include "autosep/hashing.hpp"
#include "autosep/storage.hpp"

namespace autosep {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCheckpointFormat = "autosep-checkpoint";
// RNG streams are re-derived from (seed, purpose, iteration); no positions to store.
constexpr const char* kRngScheme = "derived-v1";

}  // namespace

void to_json(nlohmann::json& j, const InstancePair& p) {
  j = nlohmann::json::array({p.anchor_id, p.other_id, p.z, p.v});
}

void from_json(const nlohmann::json& j, InstancePair& p) {
  p.anchor_id = j.at(0).get<std::string>();
  p.other_id = j.at(1).get<std::string>();
  p.z = j.at(2).get<int>();
  p.v = j.at(3).get<int>();
}

void to_json(nlohmann::json& j, const CandidateRecord& r) {
  j = {{"prompt", r.prompt},
       {"correct", r.correct},
       {"pairs_evaluated", r.pairs_evaluated},
       {"scored_iter", r.scored_iter},
       {"pairs", r.pairs}};
}

void from_json(const nlohmann::json& j, CandidateRecord& r) {
  r.prompt = j.at("prompt").get<PromptCandidate>();
  r.correct = j.at("correct").get<int>();
  r.pairs_evaluated = j.at("pairs_evaluated").get<int>();
  r.scored_iter = j.at("scored_iter").get<int>();
  r.pairs = j.at("pairs").get<std::vector<InstancePair>>();
}

void to_json(nlohmann::json& j, const ScoreRecord& r) {
  j = nlohmann::json::array({r.iteration, r.fingerprint, r.correct, r.pairs_evaluated});
}

void from_json(const nlohmann::json& j, ScoreRecord& r) {
  r.iteration = j.at(0).get<int>();
  r.fingerprint = j.at(1).get<std::string>();
  r.correct = j.at(2).get<int>();
  r.pairs_evaluated = j.at(3).get<int>();
}

void to_json(nlohmann::json& j, const RunState& s) {
  nlohmann::json archive = nlohmann::json::array();
  for (const auto& [fp, record] : s.pool.archive) archive.push_back(record);
  j = {{"config", s.config},
       {"initial_prompt", s.initial_prompt},
       {"iteration", s.pool.iteration},
       {"retained", s.pool.retained},
       {"archive", archive},
       {"history", s.history},
       {"score_log", s.score_log},
       {"negatives", s.negatives},
       {"rng", kRngScheme},
       {"ledger_next_seq", s.ledger_next_seq}};
}

void from_json(const nlohmann::json& j, RunState& s) {
  if (j.at("rng").get<std::string>() != kRngScheme) throw CheckpointError("unsupported rng scheme");
  s.config = j.at("config").get<RunConfig>();
  s.initial_prompt = j.at("initial_prompt").get<std::string>();
  s.pool.iteration = j.at("iteration").get<int>();
  s.pool.retained = j.at("retained").get<std::vector<Fingerprint>>();
  s.pool.archive.clear();
  for (const auto& entry : j.at("archive")) {
    auto record = entry.get<CandidateRecord>();
    auto fp = record.prompt.fingerprint;
    s.pool.archive.emplace(std::move(fp), std::move(record));
  }
  s.history = j.at("history").get<std::vector<std::vector<Fingerprint>>>();
  s.score_log = j.at("score_log").get<std::vector<ScoreRecord>>();
  s.negatives = j.at("negatives").get<NegativeAssignment>();
  s.ledger_next_seq = j.at("ledger_next_seq").get<std::uint64_t>();
  for (const auto& fp : s.pool.retained) {
    if (!s.pool.archive.contains(fp)) throw CheckpointError("retained prompt " + fp + " missing from archive");
  }
}

std::string serialize_checkpoint(const RunState& state) {
  const nlohmann::json body = state;
  const std::string dumped = body.dump();
  nlohmann::json wrapper = {{"format", kCheckpointFormat},
                            {"format_version", kCheckpointFormatVersion},
                            {"checksum", sha256_hex(dumped)},
                            {"body", body}};
  return wrapper.dump() + "\n";
}

RunState deserialize_checkpoint(std::string_view text) {
  nlohmann::json wrapper;
  try {
    wrapper = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!wrapper.is_object() || wrapper.value("format", "") != kCheckpointFormat) {
    throw CheckpointError("not an autosep checkpoint");
  }
  const int version = wrapper.value("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  }
  if (!wrapper.contains("body") || !wrapper.contains("checksum")) throw CheckpointError("checkpoint is incomplete");
  if (sha256_hex(wrapper["body"].dump()) != wrapper["checksum"].get<std::string>()) {
    throw CheckpointError("checkpoint checksum mismatch");
  }
  try {
    return wrapper["body"].get<RunState>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint body is malformed: ") + e.what());
  }
}

void write_checkpoint(const fs::path& file, const RunState& state) {
  atomic_write(file, serialize_checkpoint(state));
}

RunState read_checkpoint(const fs::path& file) {
  std::string text;
  try {
    text = read_text_file(file);
  } catch (const Error& e) {
    throw CheckpointError(e.what());
  }
  try {
    return deserialize_checkpoint(text);
  } catch (const CheckpointError& e) {
    throw CheckpointError(file.string() + ": " + e.what());
  }
}

RunDirectory::RunDirectory(fs::path root) : root_(std::move(root)) {}

fs::path RunDirectory::checkpoint(int iteration) const {
  return checkpoints() / ("iter_" + std::to_string(iteration) + ".state");
}

std::optional<fs::path> RunDirectory::latest_checkpoint() const {
  if (!fs::is_directory(checkpoints())) return std::nullopt;
  static const std::regex kName(R"(iter_(\d+)\.state)");
  std::optional<fs::path> best;
  long best_t = -1;
  for (const auto& entry : fs::directory_iterator(checkpoints())) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, kName)) continue;
    const long t = std::stol(m[1].str());
    if (t > best_t) {
      best_t = t;
      best = entry.path();
    }
  }
  return best;
}

void RunDirectory::save_iteration(const RunState& state) const {
  fs::create_directories(checkpoints());
  write_checkpoint(checkpoint(state.pool.iteration), state);
  write_outputs(state);
}

void RunDirectory::write_outputs(const RunState& state) const {
  atomic_write(candidates(), format_candidates_jsonl(state));
  atomic_write(scores(), format_scores_csv(state));
  if (!state.pool.retained.empty()) {
    atomic_write(best_prompt(), state.record(state.pool.retained.front()).prompt.text + "\n");
  }
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_scores_csv(const RunState& state) {
  std::string out = "iteration,fingerprint,correct,pairs_evaluated,value\n";
  for (const auto& r : state.score_log) {
    out += std::to_string(r.iteration) + "," + r.fingerprint + "," + std::to_string(r.correct) + "," +
           std::to_string(r.pairs_evaluated) + "," + format_value(r.value()) + "\n";
  }
  return out;
}

std::string format_candidates_jsonl(const RunState& state) {
  std::vector<const CandidateRecord*> records;
  for (const auto& [fp, record] : state.pool.archive) records.push_back(&record);
  std::sort(records.begin(), records.end(), [](const CandidateRecord* a, const CandidateRecord* b) {
    if (a->prompt.born_iter != b->prompt.born_iter) return a->prompt.born_iter < b->prompt.born_iter;
    return a->prompt.fingerprint < b->prompt.fingerprint;
  });
  const auto& retained = state.pool.retained;
  std::string out;
  for (const auto* r : records) {
    nlohmann::json line = {
        {"fingerprint", r->prompt.fingerprint},
        {"parent", r->prompt.parent ? nlohmann::json(*r->prompt.parent) : nlohmann::json(nullptr)},
        {"born_iter", r->prompt.born_iter},
        {"text", r->prompt.text},
        {"correct", r->correct},
        {"pairs_evaluated", r->pairs_evaluated},
        {"score", r->score()},
        {"scored_iter", r->scored_iter},
        {"retained", std::find(retained.begin(), retained.end(), r->prompt.fingerprint) != retained.end()}};
    out += line.dump() + "\n";
  }
  return out;
}

}  // namespace autosep
