#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "autosep/backend.hpp"
#include "autosep/core.hpp"
#include "autosep/optimizer.hpp"

namespace autosep {

struct ImagePrediction {
  std::string image_id;
  /// Option index, or nullopt when the model abstained.
  std::optional<int> predicted;
  int truth = 0;
};

struct EvalResult {
  std::string method;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  int correct = 0;
  int total = 0;
  int abstained = 0;
  std::vector<ImagePrediction> predictions;
};

struct EvalOptions {
  std::uint64_t seed = 0;
  int parallelism = 1;
  /// Ledger tag for the calls made.
  int iteration = 0;
};

/// Method names accepted by the CLI, in canonical order.
const std::vector<std::string>& eval_method_names();

EvalResult eval_zero_shot(Client& client, const Dataset& eval_set, const TaskSpec& task, const EvalOptions& options,
                          std::optional<double> temperature = std::nullopt);

/// Describe-then-classify with the cached descriptions of `prompt`.
EvalResult eval_with_descriptions(Client& client, const Dataset& eval_set, const TaskSpec& task,
                                  const PromptCandidate& prompt, const EvalOptions& options);

/// m classify samples per image at temperature 1.0; modal letter wins.
EvalResult eval_majority_vote(Client& client, const Dataset& eval_set, const TaskSpec& task, int m,
                              const EvalOptions& options);

/// m context images from `context_pool` with uniformly random labels, then
/// the target image last.
EvalResult eval_fewshot_random(Client& client, const Dataset& eval_set, const TaskSpec& task, int m,
                               const Dataset& context_pool, const EvalOptions& options);

/// m unlabeled context images from `context_pool` shown before the target.
EvalResult eval_multi_image(Client& client, const Dataset& eval_set, const TaskSpec& task, int m,
                            const Dataset& context_pool, const EvalOptions& options);

/// Most frequent vote; ties go to the lowest option index. nullopt when
/// every vote abstained.
std::optional<int> majority(const std::vector<std::optional<int>>& votes);

/// Context images for one target: m distinct pool members, drawn from a
/// stream keyed on (seed, target id).
std::vector<std::size_t> draw_context(std::size_t pool_size, int m, std::uint64_t seed, const std::string& target_id);

/// Product-moment correlation. Throws ConfigError on mismatched or short
/// series and UndefinedCorrelation when either series is constant.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

/// Lowercased content tokens with stop words removed and common suffixes
/// stripped.
std::set<std::string> keywords(std::string_view text);

struct DiversityScore {
  Fingerprint prompt_fingerprint;
  int keyword_count = 0;
  int unique_word_count = 0;
  double score = 0.0;
};

/// score(p) = (|K(p)| + |U(p)|) / (2 max_q |K(q)|), where U(p) holds the
/// keywords of p found in no other prompt of `prompts`.
std::vector<DiversityScore> diversity(const std::vector<PromptCandidate>& prompts);

struct IterationDiversity {
  int iteration = 0;
  double mean = 0.0;
  std::vector<DiversityScore> scores;
};

/// Scores of the retained prompts of every iteration, with U and the
/// normaliser taken over the whole archive.
std::vector<IterationDiversity> diversity_by_iteration(const RunState& state);

}  // namespace autosep
