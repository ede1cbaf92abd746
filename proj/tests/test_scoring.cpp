#include <set>

#include "autosep/errors.hpp"
#include "autosep/scoring.hpp"
#include "autosep/storage.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace autosep;

namespace {

class FirstJudge : public Backend {
 public:
  std::string model_id() const override { return "always-first"; }
  BackendReply send(const BackendRequest&) override { return {"The first", std::nullopt, std::nullopt}; }
};

DescriptionSet describe_all(testing::MockRig& rig, const Dataset& X, const PromptCandidate& p) {
  DescriptionSet out;
  for (const auto& image : X) out[image.id()] = rig.client.describe(image, p, {0, p.fingerprint}).text;
  return out;
}

// Independent oracle: V computed straight from the mock judge, bypassing the
// client and the scorer.
int oracle_v(const MockBackend& backend, const ImageRef& anchor, const std::string& anchor_text,
             const std::string& other_text, int z) {
  const auto image = decode_mock_image(read_text_file(anchor.path()));
  const auto first = z == 0 ? anchor_text : other_text;
  const auto second = z == 0 ? other_text : anchor_text;
  const bool says_first = backend.judge(image, first, second) == "First";
  return (says_first == (z == 0)) ? 1 : 0;
}

}  // namespace

TEST_CASE("instance sets have k distinct non-self negatives per anchor") {
  testing::MockRig rig(8, 3, 0.05, 1, 4);
  Rng rng(5);
  for (int k : {1, 3, 11}) {
    const auto pairs = build_instance_set(rig.X, k, rng);
    CHECK(pairs.size() == rig.X.size() * static_cast<std::size_t>(k));
    std::map<std::string, std::set<std::string>> by_anchor;
    for (const auto& p : pairs) {
      CHECK(p.anchor_id != p.other_id);
      CHECK(rig.X.index_of(p.other_id).has_value());
      by_anchor[p.anchor_id].insert(p.other_id);
    }
    CHECK(by_anchor.size() == rig.X.size());
    for (const auto& [anchor, others] : by_anchor) CHECK(static_cast<int>(others.size()) == k);
  }
  CHECK_THROWS_AS(build_instance_set(rig.X, 0, rng), ConfigError);
  CHECK_THROWS_AS(build_instance_set(rig.X, static_cast<int>(rig.X.size()), rng), ConfigError);
}

TEST_CASE("draw_negatives is deterministic in its seed and validates") {
  testing::MockRig rig(8, 3, 0.05, 2, 3);
  const auto a = draw_negatives(rig.X, 2, 77);
  CHECK(a == draw_negatives(rig.X, 2, 77));
  CHECK_FALSE(a == draw_negatives(rig.X, 2, 78));
  CHECK_NOTHROW(a.validate(rig.X, 2));
  CHECK_THROWS_AS(a.validate(rig.X, 3), ConfigError);
  auto broken = a;
  broken.negatives.begin()->second[0] = broken.negatives.begin()->first;
  CHECK_THROWS_AS(broken.validate(rig.X, 2), ConfigError);
  CHECK(nlohmann::json(a).get<NegativeAssignment>() == a);
}

TEST_CASE("shuffle bits are a function of (seed, anchor, other) only") {
  CHECK(shuffle_bit(1, "a", "b") == shuffle_bit(1, "a", "b"));
  int differ = 0;
  for (int i = 0; i < 64; ++i) differ += shuffle_bit(1, "a" + std::to_string(i), "b") != shuffle_bit(2, "a" + std::to_string(i), "b");
  CHECK(differ > 0);
}

TEST_CASE("sampled score equals the mean of independently computed V over the fixed negatives") {
  testing::MockRig rig(8, 3, 0.1, 3, 5);
  const auto p = PromptCandidate::make("Describe the bill, the crown and the tail.");
  const auto d = describe_all(rig, rig.X, p);
  const std::uint64_t seed = 99;
  const auto negatives = draw_negatives(rig.X, 3, derive_seed(seed, "negatives", 0));
  const auto result = score_sampled(rig.client, rig.X, d, negatives, seed, {0, p.fingerprint}, 4);

  int expected = 0;
  for (const auto& image : rig.X) {
    for (const auto& other : negatives.negatives.at(image.id())) {
      expected += oracle_v(rig.backend, image, d.at(image.id()), d.at(other), shuffle_bit(seed, image.id(), other));
    }
  }
  CHECK(result.correct == expected);
  CHECK(result.evaluated == static_cast<int>(rig.X.size()) * 3);
  CHECK(result.value == doctest::Approx(static_cast<double>(expected) / result.evaluated));
  for (const auto& pair : result.pairs) {
    CHECK(pair.z == shuffle_bit(seed, pair.anchor_id, pair.other_id));
    CHECK((pair.v == 0 || pair.v == 1));
  }
}

TEST_CASE("with k = n-1 the sampled score is the full score over kn") {
  testing::MockRig rig(8, 3, 0.1, 4, 2);
  const auto p = PromptCandidate::make("Describe the wing and the eye.");
  const auto d = describe_all(rig, rig.X, p);
  const int n = static_cast<int>(rig.X.size());
  const auto sampled = score_sampled(rig.client, rig.X, d, draw_negatives(rig.X, n - 1, 3), 8, {0, ""});
  const auto full = score_full(rig.client, rig.X, d, 8, {0, ""});
  CHECK(sampled.value == static_cast<double>(full) / (static_cast<double>(n - 1) * n));
}

TEST_CASE("shuffle bits are shared across prompts") {
  testing::MockRig rig(8, 3, 0.05, 5, 3);
  const auto negatives = draw_negatives(rig.X, 2, 1);
  const auto p1 = PromptCandidate::make("Describe the bill.");
  const auto p2 = PromptCandidate::make("Describe the leg and the wing.");
  const auto r1 = score_sampled(rig.client, rig.X, describe_all(rig, rig.X, p1), negatives, 12, {0, ""});
  const auto r2 = score_sampled(rig.client, rig.X, describe_all(rig, rig.X, p2), negatives, 12, {0, ""});
  REQUIRE(r1.pairs.size() == r2.pairs.size());
  for (std::size_t i = 0; i < r1.pairs.size(); ++i) {
    CHECK(r1.pairs[i].anchor_id == r2.pairs[i].anchor_id);
    CHECK(r1.pairs[i].other_id == r2.pairs[i].other_id);
    CHECK(r1.pairs[i].z == r2.pairs[i].z);
  }
}

TEST_CASE("missing descriptions are reported before any judge call") {
  testing::MockRig rig(8, 3, 0.05, 6, 2);
  DescriptionSet d = describe_all(rig, rig.X, PromptCandidate::make("Describe the bill."));
  d.erase(rig.X[1].id());
  const auto before = rig.ledger.size();
  CHECK_THROWS_AS(score_sampled(rig.client, rig.X, d, draw_negatives(rig.X, 2, 1), 1, {0, ""}), MissingDescription);
  CHECK(rig.ledger.size() == before);
}

TEST_CASE("a prompt eliciting a superset of dims never loses a pair without noise") {
  testing::MockRig rig(8, 3, 0.0, 7, 6);
  const auto p1 = PromptCandidate::make("Describe the bill.");
  const auto p2 = PromptCandidate::make("Describe the bill, the wing and the crown.");
  REQUIRE(rig.world.elicited_dims(p1.text).size() < rig.world.elicited_dims(p2.text).size());
  const auto negatives = draw_negatives(rig.X, 4, 2);
  const auto r1 = score_sampled(rig.client, rig.X, describe_all(rig, rig.X, p1), negatives, 3, {0, ""});
  const auto r2 = score_sampled(rig.client, rig.X, describe_all(rig, rig.X, p2), negatives, 3, {0, ""});
  for (std::size_t i = 0; i < r1.pairs.size(); ++i) CHECK(r2.pairs[i].v >= r1.pairs[i].v);
  CHECK(r2.value >= r1.value);
}

TEST_CASE("a judge that always answers first scores about one half") {
  testing::TempDir dir;
  const auto world = MockWorld::standard(8, 2, 0.05, 9);
  const Dataset X = generate_mock_dataset(world, dir.path(), "f", 150, 9);
  FirstJudge judge;
  QueryLedger ledger;
  DescriptionCache cache;
  Client client(judge, ledger, cache);
  DescriptionSet d;
  for (const auto& image : X) d[image.id()] = "text " + image.id();
  const auto r = score_sampled(client, X, d, draw_negatives(X, 2, 4), 5, {0, ""});
  // V = 1 exactly when Z = 0.
  int zeros = 0;
  for (const auto& p : r.pairs) zeros += p.z == 0;
  CHECK(r.correct == zeros);
  const double sigma = std::sqrt(0.25 / r.evaluated);
  CHECK(std::abs(r.value - 0.5) < 4 * sigma);
}
