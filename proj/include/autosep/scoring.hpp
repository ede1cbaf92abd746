#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "autosep/backend.hpp"
#include "autosep/core.hpp"
#include "autosep/hashing.hpp"

namespace autosep {

/// Ordered (anchor, other) image pair judged under one prompt.
struct InstancePair {
  std::string anchor_id;
  std::string other_id;
  /// 1 when the anchor's own description is shown second.
  int z = 0;
  /// Match outcome; -1 until evaluated.
  int v = -1;

  friend bool operator==(const InstancePair&, const InstancePair&) = default;
};

/// Per-image foil sets, drawn once and reused for every prompt.
struct NegativeAssignment {
  std::uint64_t seed = 0;
  /// anchor id -> k distinct other ids, in draw order.
  std::map<std::string, std::vector<std::string>> negatives;

  std::size_t k() const { return negatives.empty() ? 0 : negatives.begin()->second.size(); }
  /// Throws ConfigError unless every image of `X` has exactly k valid,
  /// distinct, non-self negatives.
  void validate(const Dataset& X, int k) const;

  friend bool operator==(const NegativeAssignment&, const NegativeAssignment&) = default;
};

void to_json(nlohmann::json& j, const NegativeAssignment& n);
void from_json(const nlohmann::json& j, NegativeAssignment& n);

struct ScoreResult {
  double value = 0.0;
  int correct = 0;
  int evaluated = 0;
  std::vector<InstancePair> pairs;
};

/// Presentation-order bit for a pair, split from the run seed so it does not
/// depend on evaluation order.
int shuffle_bit(std::uint64_t run_seed, const std::string& anchor_id, const std::string& other_id);

/// k negatives per anchor drawn without replacement from the other members
/// of `minibatch`. Pairs are grouped by anchor in minibatch order.
std::vector<InstancePair> build_instance_set(const Dataset& minibatch, int k, Rng& rng);

NegativeAssignment draw_negatives(const Dataset& X, int k, std::uint64_t seed);

/// V(x_i, x_j): 1 iff the judge picks the position holding `anchor_text`.
/// An unparseable reply counts as 0.
int match_indicator(Client& client, const ImageRef& anchor, const std::string& anchor_text,
                    const std::string& other_text, int z, const CallContext& context);

/// Psi: sum of V over every ordered pair of distinct images.
std::int64_t score_full(Client& client, const Dataset& X, const DescriptionSet& descriptions,
                        std::uint64_t run_seed, const CallContext& context, int parallelism = 1);

/// Psi-hat: mean of V over the fixed negatives of every image.
ScoreResult score_sampled(Client& client, const Dataset& X, const DescriptionSet& descriptions,
                          const NegativeAssignment& negatives, std::uint64_t run_seed, const CallContext& context,
                          int parallelism = 1);

}  // namespace autosep
