#include "autosep/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>

#include "autosep/errors.hpp"
#include "autosep/hashing.hpp"
#include "autosep/parallel.hpp"

namespace autosep {

namespace {

constexpr double kVoteTemperature = 1.0;

using Predictor = std::function<std::optional<int>(const ImageRef&)>;

EvalResult run_method(const std::string& method, const Dataset& eval_set, const TaskSpec& task,
                      const EvalOptions& options, const Predictor& predict) {
  if (eval_set.empty()) throw DataError("evaluation set is empty");
  task.validate();
  const EvaluationContext gate;
  std::vector<int> truth;
  for (const auto& image : eval_set) {
    auto label = gate.label(image);
    if (!label) throw DataError("evaluation image '" + image.id() + "' has no label");
    if (*label < 0 || static_cast<std::size_t>(*label) >= task.num_classes()) {
      throw DataError("evaluation image '" + image.id() + "' has label " + std::to_string(*label) + " outside [0, " +
                      std::to_string(task.num_classes()) + ")");
    }
    truth.push_back(*label);
  }

  std::vector<std::optional<int>> predicted(eval_set.size());
  parallel_for(eval_set.size(), options.parallelism, [&](std::size_t i) { predicted[i] = predict(eval_set[i]); });

  EvalResult result;
  result.method = method;
  result.seed = options.seed;
  result.total = static_cast<int>(eval_set.size());
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    if (!predicted[i]) ++result.abstained;
    if (predicted[i] == truth[i]) ++result.correct;
    result.predictions.push_back({eval_set[i].id(), predicted[i], truth[i]});
  }
  result.accuracy = static_cast<double>(result.correct) / result.total;
  return result;
}

void require_context(int m, const Dataset& pool) {
  if (m < 1) throw ConfigError("context size m must be >= 1 (m=" + std::to_string(m) + ")");
  if (pool.size() < static_cast<std::size_t>(m)) {
    throw ConfigError("context pool has " + std::to_string(pool.size()) + " images, m=" + std::to_string(m));
  }
}

const std::set<std::string>& stop_words() {
  static const std::set<std::string> kWords = {
      "a",       "about",   "above",  "after",   "again",   "against", "all",     "also",    "am",     "an",
      "and",     "any",     "are",    "as",      "at",      "be",      "because", "been",    "before", "being",
      "below",   "between", "both",   "but",     "by",      "can",     "could",   "did",     "do",     "does",
      "doing",   "down",    "during", "each",    "either",  "etc",     "few",     "for",     "from",   "further",
      "had",     "has",     "have",   "having",  "he",      "her",     "here",    "hers",    "him",    "his",
      "how",     "i",       "if",     "in",      "into",    "is",      "it",      "its",     "itself", "just",
      "may",     "me",      "might",  "more",    "most",    "much",    "must",    "my",      "no",     "nor",
      "not",     "now",     "of",     "off",     "on",      "once",    "only",    "or",      "other",  "our",
      "ours",    "out",     "over",   "own",     "please",  "same",    "shall",   "she",     "should", "so",
      "some",    "such",    "than",   "that",    "the",     "their",   "theirs",  "them",    "then",   "there",
      "these",   "they",    "this",   "those",   "through", "to",      "too",     "under",   "until",  "up",
      "upon",    "us",      "very",   "via",     "was",     "we",      "were",    "what",    "when",   "where",
      "whether", "which",   "while",  "who",     "whom",    "why",     "will",    "with",    "within", "without",
      "would",   "you",     "your",   "yours",
  };
  return kWords;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Strips one inflectional suffix, keeping a stem of at least three letters.
std::string stem(std::string word) {
  static constexpr std::string_view kSuffixes[] = {"ness", "ing", "ies", "ed", "ly", "es", "s"};
  for (auto suffix : kSuffixes) {
    if (!ends_with(word, suffix) || word.size() < suffix.size() + 3) continue;
    if (suffix == "s" && ends_with(word, "ss")) continue;
    word.resize(word.size() - suffix.size());
    if (suffix == "ies") word += 'y';
    break;
  }
  return word;
}

}  // namespace

const std::vector<std::string>& eval_method_names() {
  static const std::vector<std::string> kNames = {"zero-shot", "with-descriptions", "majority-vote",
                                                  "fewshot-random", "multi-image"};
  return kNames;
}

EvalResult eval_zero_shot(Client& client, const Dataset& eval_set, const TaskSpec& task, const EvalOptions& options,
                          std::optional<double> temperature) {
  const CallContext ctx{options.iteration, ""};
  return run_method("zero-shot", eval_set, task, options, [&](const ImageRef& image) {
    return client.classify(image, task, nullptr, ctx, nullptr, temperature);
  });
}

EvalResult eval_with_descriptions(Client& client, const Dataset& eval_set, const TaskSpec& task,
                                  const PromptCandidate& prompt, const EvalOptions& options) {
  const CallContext ctx{options.iteration, prompt.fingerprint};
  return run_method("with-descriptions", eval_set, task, options, [&](const ImageRef& image) {
    const auto description = client.describe(image, prompt, ctx);
    return client.classify(image, task, &description.text, ctx);
  });
}

std::optional<int> majority(const std::vector<std::optional<int>>& votes) {
  std::map<int, int> counts;
  for (const auto& v : votes) {
    if (v) ++counts[*v];
  }
  std::optional<int> best;
  int best_count = 0;
  for (auto [option, count] : counts) {
    if (count > best_count) {
      best = option;
      best_count = count;
    }
  }
  return best;
}

EvalResult eval_majority_vote(Client& client, const Dataset& eval_set, const TaskSpec& task, int m,
                              const EvalOptions& options) {
  if (m < 1) throw ConfigError("majority vote needs m >= 1 (m=" + std::to_string(m) + ")");
  const CallContext ctx{options.iteration, ""};
  return run_method("majority-vote", eval_set, task, options, [&](const ImageRef& image) {
    std::vector<std::optional<int>> votes;
    for (int s = 0; s < m; ++s) {
      votes.push_back(client.classify(image, task, nullptr, ctx, nullptr, kVoteTemperature, s));
    }
    return majority(votes);
  });
}

std::vector<std::size_t> draw_context(std::size_t pool_size, int m, std::uint64_t seed, const std::string& target_id) {
  Rng rng(derive_seed(seed, "context", target_id));
  return rng.sample_indices(pool_size, static_cast<std::size_t>(m));
}

EvalResult eval_fewshot_random(Client& client, const Dataset& eval_set, const TaskSpec& task, int m,
                               const Dataset& context_pool, const EvalOptions& options) {
  require_context(m, context_pool);
  const CallContext ctx{options.iteration, ""};
  const auto letters = task.option_letters();
  return run_method("fewshot-random", eval_set, task, options, [&](const ImageRef& image) {
    std::vector<ImageRef> images;
    for (auto i : draw_context(context_pool.size(), m, options.seed, image.id())) images.push_back(context_pool[i]);
    Rng labels(derive_seed(options.seed, "random-labels", image.id()));
    std::vector<char> given;
    for (int i = 0; i < m; ++i) given.push_back(letters[labels.below(letters.size())]);
    images.push_back(image);
    return client.classify_images(images, client.templates().fewshot_random_labels(task, given), task.num_classes(),
                                  ctx);
  });
}

EvalResult eval_multi_image(Client& client, const Dataset& eval_set, const TaskSpec& task, int m,
                            const Dataset& context_pool, const EvalOptions& options) {
  require_context(m, context_pool);
  const CallContext ctx{options.iteration, ""};
  const auto prompt = client.templates().multi_image(task, m);
  return run_method("multi-image", eval_set, task, options, [&](const ImageRef& image) {
    std::vector<ImageRef> images;
    for (auto i : draw_context(context_pool.size(), m, options.seed, image.id())) images.push_back(context_pool[i]);
    images.push_back(image);
    return client.classify_images(images, prompt, task.num_classes(), ctx);
  });
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) {
    throw ConfigError("pearson needs equal-length series (" + std::to_string(xs.size()) + " vs " +
                      std::to_string(ys.size()) + ")");
  }
  if (xs.size() < 2) throw ConfigError("pearson needs at least 2 points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("correlation is undefined for a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::set<std::string> keywords(std::string_view text) {
  std::set<std::string> out;
  std::string word;
  auto flush = [&] {
    if (word.size() >= 2 && !stop_words().contains(word)) {
      bool has_alpha = std::any_of(word.begin(), word.end(), [](unsigned char c) { return std::isalpha(c); });
      if (has_alpha) out.insert(stem(word));
    }
    word.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      word += static_cast<char>(std::tolower(c));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::vector<DiversityScore> diversity(const std::vector<PromptCandidate>& prompts) {
  std::vector<std::set<std::string>> sets;
  std::map<std::string, int> owners;
  std::size_t max_k = 0;
  for (const auto& p : prompts) {
    sets.push_back(keywords(p.text));
    for (const auto& w : sets.back()) ++owners[w];
    max_k = std::max(max_k, sets.back().size());
  }
  std::vector<DiversityScore> out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    DiversityScore s;
    s.prompt_fingerprint = prompts[i].fingerprint;
    s.keyword_count = static_cast<int>(sets[i].size());
    s.unique_word_count = static_cast<int>(
        std::count_if(sets[i].begin(), sets[i].end(), [&](const std::string& w) { return owners[w] == 1; }));
    s.score = max_k == 0 ? 0.0 : (s.keyword_count + s.unique_word_count) / (2.0 * static_cast<double>(max_k));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<IterationDiversity> diversity_by_iteration(const RunState& state) {
  std::vector<PromptCandidate> prompts;
  for (const auto& [fp, record] : state.pool.archive) prompts.push_back(record.prompt);
  std::map<Fingerprint, DiversityScore> by_fp;
  for (auto& s : diversity(prompts)) by_fp.emplace(s.prompt_fingerprint, std::move(s));

  std::vector<IterationDiversity> out;
  for (std::size_t t = 0; t < state.history.size(); ++t) {
    IterationDiversity row;
    row.iteration = static_cast<int>(t);
    for (const auto& fp : state.history[t]) row.scores.push_back(by_fp.at(fp));
    double sum = 0.0;
    for (const auto& s : row.scores) sum += s.score;
    row.mean = row.scores.empty() ? 0.0 : sum / static_cast<double>(row.scores.size());
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace autosep
