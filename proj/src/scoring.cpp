#include "autosep/scoring.hpp"

#include <set>

#include "autosep/errors.hpp"
#include "autosep/parallel.hpp"

namespace autosep {

void NegativeAssignment::validate(const Dataset& X, int k) const {
  if (negatives.size() != X.size()) {
    throw ConfigError("negative assignment covers " + std::to_string(negatives.size()) + " images, dataset has " +
                      std::to_string(X.size()));
  }
  for (const auto& image : X) {
    auto it = negatives.find(image.id());
    if (it == negatives.end()) throw ConfigError("no negatives for image '" + image.id() + "'");
    if (static_cast<int>(it->second.size()) != k) {
      throw ConfigError("image '" + image.id() + "' has " + std::to_string(it->second.size()) + " negatives, k=" +
                        std::to_string(k));
    }
    std::set<std::string> seen;
    for (const auto& other : it->second) {
      if (other == image.id()) throw ConfigError("self-pair for image '" + image.id() + "'");
      if (!X.index_of(other)) throw ConfigError("negative '" + other + "' is not in the dataset");
      if (!seen.insert(other).second) throw ConfigError("duplicate negative for image '" + image.id() + "'");
    }
  }
}

void to_json(nlohmann::json& j, const NegativeAssignment& n) {
  j = {{"seed", n.seed}, {"negatives", n.negatives}};
}

void from_json(const nlohmann::json& j, NegativeAssignment& n) {
  n.seed = j.at("seed").get<std::uint64_t>();
  n.negatives = j.at("negatives").get<std::map<std::string, std::vector<std::string>>>();
}

int shuffle_bit(std::uint64_t run_seed, const std::string& anchor_id, const std::string& other_id) {
  return static_cast<int>(derive_seed(run_seed, "shuffle", anchor_id, other_id) >> 63);
}

std::vector<InstancePair> build_instance_set(const Dataset& minibatch, int k, Rng& rng) {
  const auto n = minibatch.size();
  if (n < 2) throw ConfigError("instance set needs at least 2 images");
  if (k < 1 || static_cast<std::size_t>(k) > n - 1) {
    throw ConfigError("k must be in [1, |X_t|-1] (k=" + std::to_string(k) + ", |X_t|=" + std::to_string(n) + ")");
  }
  std::vector<InstancePair> pairs;
  pairs.reserve(n * static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    // Draw from the n-1 other positions, then skip over the anchor.
    for (auto j : rng.sample_indices(n - 1, static_cast<std::size_t>(k))) {
      const std::size_t other = j < i ? j : j + 1;
      pairs.push_back({minibatch[i].id(), minibatch[other].id(), 0, -1});
    }
  }
  return pairs;
}

NegativeAssignment draw_negatives(const Dataset& X, int k, std::uint64_t seed) {
  Rng rng(seed);
  NegativeAssignment out;
  out.seed = seed;
  for (auto& pair : build_instance_set(X, k, rng)) out.negatives[pair.anchor_id].push_back(pair.other_id);
  return out;
}

int match_indicator(Client& client, const ImageRef& anchor, const std::string& anchor_text,
                    const std::string& other_text, int z, const CallContext& context) {
  const Choice expected = z == 0 ? Choice::kFirst : Choice::kSecond;
  const Choice got = z == 0 ? client.binary_choice(anchor, anchor_text, other_text, context)
                            : client.binary_choice(anchor, other_text, anchor_text, context);
  return got == expected ? 1 : 0;
}

namespace {

const std::string& lookup(const DescriptionSet& descriptions, const std::string& id) {
  auto it = descriptions.find(id);
  if (it == descriptions.end()) throw MissingDescription("no description for image '" + id + "'");
  return it->second;
}

std::vector<int> evaluate(Client& client, const Dataset& X, std::vector<InstancePair>& pairs,
                          const DescriptionSet& descriptions, std::uint64_t run_seed, const CallContext& context,
                          int parallelism) {
  for (auto& p : pairs) {
    lookup(descriptions, p.anchor_id);
    lookup(descriptions, p.other_id);
    p.z = shuffle_bit(run_seed, p.anchor_id, p.other_id);
  }
  std::vector<int> v(pairs.size(), 0);
  parallel_for(pairs.size(), parallelism, [&](std::size_t i) {
    const auto& p = pairs[i];
    v[i] = match_indicator(client, X.at(p.anchor_id), lookup(descriptions, p.anchor_id),
                           lookup(descriptions, p.other_id), p.z, context);
  });
  for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].v = v[i];
  return v;
}

}  // namespace

std::int64_t score_full(Client& client, const Dataset& X, const DescriptionSet& descriptions, std::uint64_t run_seed,
                        const CallContext& context, int parallelism) {
  std::vector<InstancePair> pairs;
  for (const auto& a : X) {
    for (const auto& b : X) {
      if (a.id() != b.id()) pairs.push_back({a.id(), b.id(), 0, -1});
    }
  }
  std::int64_t total = 0;
  for (int v : evaluate(client, X, pairs, descriptions, run_seed, context, parallelism)) total += v;
  return total;
}

ScoreResult score_sampled(Client& client, const Dataset& X, const DescriptionSet& descriptions,
                          const NegativeAssignment& negatives, std::uint64_t run_seed, const CallContext& context,
                          int parallelism) {
  const int k = static_cast<int>(negatives.k());
  if (X.size() < 2 || k < 1 || static_cast<std::size_t>(k) > X.size() - 1) {
    throw ConfigError("score_sampled needs 1 <= k <= |X|-1");
  }
  negatives.validate(X, k);
  ScoreResult result;
  for (const auto& image : X) {
    for (const auto& other : negatives.negatives.at(image.id())) result.pairs.push_back({image.id(), other, 0, -1});
  }
  for (int v : evaluate(client, X, result.pairs, descriptions, run_seed, context, parallelism)) result.correct += v;
  result.evaluated = static_cast<int>(result.pairs.size());
  result.value = static_cast<double>(result.correct) / (static_cast<double>(k) * static_cast<double>(X.size()));
  return result;
}

}  // namespace autosep
