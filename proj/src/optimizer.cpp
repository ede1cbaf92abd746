#include "autosep/optimizer.hpp"

#include <algorithm>
#include <set>

#include "autosep/errors.hpp"
#include "autosep/parallel.hpp"

namespace autosep {

namespace {

constexpr int kReasonsPerReflection = 3;

std::vector<ErrorExample> as_examples(const std::vector<ErrorPair>& errors) {
  std::vector<ErrorExample> out;
  out.reserve(errors.size());
  for (const auto& e : errors) out.push_back({e.anchor_description, e.other_description, e.z == 0});
  return out;
}

BackendRequest edit_request(const Client& client, RequestKind kind, std::string prompt) {
  BackendRequest request;
  request.kind = kind;
  request.prompt_text = std::move(prompt);
  request.temperature = client.generation().edit_temperature;
  request.max_tokens = client.generation().edit_max_tokens;
  return request;
}

/// Descriptions of every image in X under `prompt`, generated on cache miss.
DescriptionSet describe_all(Client& client, const Dataset& X, const PromptCandidate& prompt, int iteration,
                            int parallelism) {
  std::vector<std::string> texts(X.size());
  parallel_for(X.size(), parallelism, [&](std::size_t i) {
    texts[i] = client.describe(X[i], prompt, {iteration, prompt.fingerprint}).text;
  });
  DescriptionSet out;
  for (std::size_t i = 0; i < X.size(); ++i) out.emplace(X[i].id(), std::move(texts[i]));
  return out;
}

void score_into(Client& client, const Dataset& X, const DescriptionSet& descriptions, RunState& state,
                CandidateRecord& record, int iteration) {
  CallContext ctx{iteration, record.prompt.fingerprint};
  auto result = score_sampled(client, X, descriptions, state.negatives, state.config.seed, ctx,
                              state.config.parallelism);
  record.correct = result.correct;
  record.pairs_evaluated = result.evaluated;
  record.scored_iter = iteration;
  record.pairs = std::move(result.pairs);
  state.score_log.push_back({iteration, record.prompt.fingerprint, record.correct, record.pairs_evaluated});
}

std::vector<Fingerprint> retain(const RunState& state, const std::vector<Fingerprint>& candidates, int b) {
  std::vector<ScoredCandidate> scored;
  for (const auto& fp : candidates) {
    const auto& rec = state.record(fp);
    scored.push_back({fp, rec.score(), rec.prompt.born_iter});
  }
  std::vector<Fingerprint> out;
  for (auto& s : select_top_b(std::move(scored), b)) out.push_back(std::move(s.fingerprint));
  return out;
}

}  // namespace

std::vector<ScoredCandidate> select_top_b(std::vector<ScoredCandidate> candidates, int b) {
  std::sort(candidates.begin(), candidates.end(), [](const ScoredCandidate& a, const ScoredCandidate& c) {
    if (a.score != c.score) return a.score > c.score;
    if (a.born_iter != c.born_iter) return a.born_iter < c.born_iter;
    return a.fingerprint < c.fingerprint;
  });
  if (b >= 0 && candidates.size() > static_cast<std::size_t>(b)) candidates.resize(static_cast<std::size_t>(b));
  return candidates;
}

std::optional<Reflection> reflect(Client& client, const TaskSpec& task, const PromptCandidate& prompt,
                                  const std::vector<ErrorPair>& errors, int max_errors, int iteration) {
  if (errors.empty() || static_cast<int>(errors.size()) > max_errors) {
    throw ConfigError("reflect needs between 1 and " + std::to_string(max_errors) + " error pairs (got " +
                      std::to_string(errors.size()) + ")");
  }
  const auto request = edit_request(
      client, RequestKind::kReflect,
      client.templates().reflect(task, prompt.text, as_examples(errors), kReasonsPerReflection));
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string critique = normalize_prompt_text(client.complete(request, {iteration, prompt.fingerprint}));
    if (critique.empty()) continue;
    Reflection r;
    r.prompt_fingerprint = prompt.fingerprint;
    for (const auto& e : errors) r.sampled_error_pair_ids.push_back(e.anchor_id + ">" + e.other_id);
    r.critique = std::move(critique);
    return r;
  }
  return std::nullopt;
}

std::optional<PromptCandidate> modify(Client& client, const TaskSpec& task, const PromptCandidate& prompt,
                                      const Reflection& reflection, const std::vector<ErrorPair>& errors,
                                      int iteration) {
  if (reflection.prompt_fingerprint != prompt.fingerprint) {
    throw ConfigError("reflection was produced for a different prompt");
  }
  const auto request =
      edit_request(client, RequestKind::kModify,
                   client.templates().modify(task, prompt.text, reflection.critique, as_examples(errors)));
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto text = extract_tagged(client.complete(request, {iteration, prompt.fingerprint}), "<START>", "<END>");
    if (text && !normalize_prompt_text(*text).empty()) {
      return PromptCandidate::make(*text, prompt.fingerprint, iteration);
    }
  }
  return std::nullopt;
}

RunResult run_autosep(Client& client, const TaskSpec& task, const RunConfig& config, const Dataset& X,
                      const PromptCandidate& p0, RunOptions options) {
  config.validate();
  if (static_cast<int>(X.size()) != config.dataset_size) {
    throw ConfigError("config n=" + std::to_string(config.dataset_size) + " but dataset has " +
                      std::to_string(X.size()) + " images");
  }
  const std::uint64_t seed = config.seed;
  const int workers = config.parallelism;

  RunState state;
  if (options.resume) {
    state = std::move(*options.resume);
    if (!(state.config == config)) throw CheckpointError("checkpoint was written with a different run config");
    if (state.initial_prompt != p0.fingerprint) throw CheckpointError("checkpoint was written for a different p0");
    state.negatives.validate(X, config.negatives_k);
  } else {
    state.config = config;
    state.initial_prompt = p0.fingerprint;
    state.negatives = draw_negatives(X, config.negatives_k, derive_seed(seed, "negatives", 0));
    CandidateRecord root{p0, 0, 0, 0, {}};
    root.prompt.parent.reset();
    root.prompt.born_iter = 0;
    const auto descriptions = describe_all(client, X, root.prompt, 0, workers);
    score_into(client, X, descriptions, state, root, 0);
    state.pool.archive.emplace(p0.fingerprint, std::move(root));
    state.pool.retained = {p0.fingerprint};
    state.pool.iteration = 0;
    state.history = {state.pool.retained};
  }

  for (int t = state.pool.iteration + 1; t <= config.iterations; ++t) {
    if (config.negatives == NegativesMode::kPerIteration) {
      state.negatives = draw_negatives(X, config.negatives_k, derive_seed(seed, "negatives", t));
    }

    std::set<std::string> minibatch;
    if (config.minibatch_size >= static_cast<int>(X.size())) {
      for (const auto& image : X) minibatch.insert(image.id());
    } else {
      Rng rng(derive_seed(seed, "minibatch", t));
      for (auto i : rng.sample_indices(X.size(), static_cast<std::size_t>(config.minibatch_size))) {
        minibatch.insert(X[i].id());
      }
    }

    std::vector<PromptCandidate> fresh;
    std::set<Fingerprint> fresh_fps;
    for (const auto& fp : state.pool.retained) {
      const auto& parent = state.record(fp);
      std::vector<const InstancePair*> wrong;
      for (const auto& pair : parent.pairs) {
        if (pair.v == 0 && minibatch.contains(pair.anchor_id)) wrong.push_back(&pair);
      }
      // Nothing to learn from: the prompt is carried forward unchanged.
      if (wrong.empty()) continue;

      const auto descriptions = describe_all(client, X, parent.prompt, t, workers);
      std::vector<ErrorPair> errors;
      for (const auto* p : wrong) {
        errors.push_back({p->anchor_id, p->other_id, descriptions.at(p->anchor_id), descriptions.at(p->other_id),
                          p->z, fp});
      }

      Rng rng(derive_seed(seed, "errors", t, fp));
      const auto subset_size = std::min<std::size_t>(errors.size(), config.error_pairs_per_reflection);
      for (int r = 0; r < config.reflections_l; ++r) {
        std::vector<ErrorPair> subset;
        for (auto i : rng.sample_indices(errors.size(), subset_size)) subset.push_back(errors[i]);
        auto reflection = reflect(client, task, parent.prompt, subset, config.error_pairs_per_reflection, t);
        if (!reflection) continue;
        auto child = modify(client, task, parent.prompt, *reflection, subset, t);
        if (!child) continue;
        if (state.pool.archive.contains(child->fingerprint) || !fresh_fps.insert(child->fingerprint).second) continue;
        fresh.push_back(std::move(*child));
      }
    }

    std::vector<Fingerprint> contenders = state.pool.retained;
    for (auto& prompt : fresh) {
      DescriptionSet descriptions;
      try {
        descriptions = describe_all(client, X, prompt, t, workers);
      } catch (const DescribeFailed&) {
        if (!config.skip_failed) throw;
        continue;
      }
      CandidateRecord record{prompt, 0, 0, t, {}};
      score_into(client, X, descriptions, state, record, t);
      contenders.push_back(prompt.fingerprint);
      state.pool.archive.emplace(prompt.fingerprint, std::move(record));
    }

    if (config.negatives == NegativesMode::kPerIteration) {
      for (const auto& fp : state.pool.retained) {
        auto& record = state.pool.archive.at(fp);
        const auto descriptions = describe_all(client, X, record.prompt, t, workers);
        score_into(client, X, descriptions, state, record, t);
      }
    }

    state.pool.retained = retain(state, contenders, config.beam_b);
    state.pool.iteration = t;
    state.history.push_back(state.pool.retained);
    state.ledger_next_seq = client.ledger().next_seq();
    if (options.on_iteration) options.on_iteration(state);
    if (options.stop_after && t >= *options.stop_after) break;
  }

  RunResult result;
  const auto& best = state.record(state.pool.retained.front());
  result.best = best.prompt;
  result.best_score = best.score();
  result.state = std::move(state);
  return result;
}

}  // namespace autosep
