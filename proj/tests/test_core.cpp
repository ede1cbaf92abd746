#include <set>

#include "autosep/core.hpp"
#include "autosep/errors.hpp"
#include "autosep/hashing.hpp"
#include "doctest.h"

using namespace autosep;

TEST_CASE("normalize_prompt_text trims and folds line endings") {
  CHECK(normalize_prompt_text("  a\r\nb\rc \n") == "a\nb\nc");
  CHECK(normalize_prompt_text("\t\n") == "");
}

TEST_CASE("fingerprint is SHA-256 of the normalized text") {
  // Known digest of "abc".
  CHECK(fingerprint("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(fingerprint("  abc\r\n") == fingerprint("abc"));
  CHECK(fingerprint("abc") != fingerprint("abd"));
  CHECK_THROWS_AS(fingerprint("   "), ConfigError);
}

TEST_CASE("PromptCandidate::make records lineage") {
  auto root = PromptCandidate::make("Describe the bird.");
  CHECK_FALSE(root.parent.has_value());
  auto child = PromptCandidate::make("Describe the bird's bill. ", root.fingerprint, 2);
  CHECK(child.text == "Describe the bird's bill.");
  CHECK(child.parent == root.fingerprint);
  CHECK(child.born_iter == 2);
}

TEST_CASE("Dataset rejects duplicate ids and supports lookup") {
  Dataset d({ImageRef("a", "a.png"), ImageRef("b", "b.png")});
  CHECK(d.size() == 2);
  CHECK(d.at("b").path() == "b.png");
  CHECK(d.index_of("a") == 0u);
  CHECK_FALSE(d.index_of("z").has_value());
  CHECK_THROWS_AS(Dataset({ImageRef("a", "1"), ImageRef("a", "2")}), DataError);
  auto sub = d.subset({1});
  CHECK(sub.size() == 1);
  CHECK(sub[0].id() == "b");
}

TEST_CASE("require_disjoint reports shared ids") {
  Dataset a({ImageRef("x", "x"), ImageRef("y", "y")});
  Dataset b({ImageRef("y", "y2"), ImageRef("z", "z")});
  CHECK_THROWS_WITH_AS(require_disjoint(a, b), doctest::Contains("y"), DataError);
  CHECK_NOTHROW(require_disjoint(a, Dataset({ImageRef("z", "z")})));
}

TEST_CASE("labels are only reachable through the evaluation gate") {
  ImageRef image("a", "a.png", 2);
  CHECK(image.has_label());
  const auto before = EvaluationContext::access_count();
  EvaluationContext gate;
  CHECK(gate.label(image) == 2);
  CHECK(EvaluationContext::access_count() == before + 1);
}

TEST_CASE("RunConfig validation lists every violation") {
  RunConfig c;
  c.dataset_size = 5;
  c.minibatch_size = 5;
  CHECK(c.violations().empty());

  c.negatives_k = 5;
  auto v = c.violations();
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("k=5") != std::string::npos);
  CHECK(v[0].find("n=5") != std::string::npos);

  c.iterations = 0;
  c.beam_b = 0;
  CHECK(c.violations().size() == 3);
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("per-iteration query budget follows (2 + n + kn) b l") {
  RunConfig c;
  c.dataset_size = 20;
  c.negatives_k = 2;
  c.beam_b = 2;
  c.reflections_l = 2;
  CHECK(c.query_budget_per_iteration() == (2 + 20 + 2 * 20) * 2 * 2);
  c.dataset_size = 60;
  c.beam_b = 4;
  c.reflections_l = 3;
  CHECK(c.query_budget_per_iteration() == (2 + 60 + 2 * 60) * 4 * 3);
}

TEST_CASE("TaskSpec option letters and validation") {
  TaskSpec t{"bird", "", {"a", "b", "c"}};
  CHECK(t.plural() == "birds");
  CHECK(t.option_letters() == std::vector<char>{'A', 'B', 'C'});
  CHECK_NOTHROW(t.validate());
  TaskSpec bad{"", "", {"only"}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("JSON round trips") {
  RunConfig c;
  c.dataset_size = 30;
  c.seed = 0xfedcba9876543210ULL;
  c.negatives = NegativesMode::kPerIteration;
  c.model_id = "m";
  nlohmann::json j = c;
  CHECK(j.at("negatives") == "per_iteration");
  CHECK(j.get<RunConfig>() == c);

  auto p = PromptCandidate::make("text", std::string("parent"), 3);
  CHECK(nlohmann::json(p).get<PromptCandidate>() == p);

  TaskSpec t{"flower", "flowers", {"rose", "tulip"}};
  CHECK(nlohmann::json(t).get<TaskSpec>() == t);
}

TEST_CASE("StableHasher and derive_seed are deterministic and order sensitive") {
  CHECK(derive_seed(1, "a", 2) == derive_seed(1, "a", 2));
  CHECK(derive_seed(1, "a", 2) != derive_seed(1, "a", 3));
  CHECK(derive_seed(1, "ab", "c") != derive_seed(1, "a", "bc"));
  StableHasher h(5);
  const double u = h.add("x").unit();
  CHECK(u >= 0.0);
  CHECK(u < 1.0);
}

TEST_CASE("Rng bounded draws stay in range and sample without replacement") {
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) CHECK(rng.below(7) < 7u);
  for (std::size_t n : {1u, 5u, 50u}) {
    for (std::size_t k = 0; k <= n; k += 3) {
      auto s = rng.sample_indices(n, k);
      CHECK(s.size() == k);
      std::set<std::size_t> unique(s.begin(), s.end());
      CHECK(unique.size() == k);
      for (auto v : s) CHECK(v < n);
    }
  }
  Rng a(9);
  Rng b(9);
  CHECK(a.sample_indices(100, 10) == b.sample_indices(100, 10));
}

TEST_CASE("Rng::below is close to uniform") {
  Rng rng(3);
  std::vector<int> counts(4, 0);
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) ++counts[rng.below(4)];
  // 4 sigma band around draws/4.
  const double sigma = std::sqrt(draws * 0.25 * 0.75);
  for (int c : counts) CHECK(std::abs(c - draws / 4.0) < 4 * sigma);
}
