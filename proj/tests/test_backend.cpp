#include <deque>
#include <fstream>
#include <functional>
#include <mutex>

#include "autosep/backend.hpp"
#include "autosep/errors.hpp"
#include "autosep/storage.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace autosep;

namespace {

/// Plays back a fixed script of attempts; each step either returns text or
/// throws.
class ScriptedBackend : public Backend {
 public:
  using Step = std::function<BackendReply()>;

  explicit ScriptedBackend(std::deque<Step> steps) : steps_(std::move(steps)) {}
  std::string model_id() const override { return "scripted"; }
  BackendReply send(const BackendRequest& request) override {
    std::lock_guard lock(mutex_);
    seen.push_back(request);
    if (steps_.empty()) return {"fallback", std::nullopt, std::nullopt};
    auto step = std::move(steps_.front());
    steps_.pop_front();
    return step();
  }

  std::vector<BackendRequest> seen;

 private:
  std::mutex mutex_;
  std::deque<Step> steps_;
};

ScriptedBackend::Step reply(std::string text) {
  return [text] { return BackendReply{text, 12, 3}; };
}
ScriptedBackend::Step transient() {
  return []() -> BackendReply { throw TransientError("rate limited"); };
}
ScriptedBackend::Step fatal() {
  return []() -> BackendReply { throw BackendError("bad request"); };
}

BackendRequest reflect_request() {
  BackendRequest r;
  r.kind = RequestKind::kReflect;
  r.prompt_text = "why?";
  return r;
}

struct Harness {
  ScriptedBackend backend;
  QueryLedger ledger;
  DescriptionCache cache;
  Client client;
  std::vector<std::chrono::milliseconds> sleeps;

  explicit Harness(std::deque<ScriptedBackend::Step> steps)
      : backend(std::move(steps)), client(backend, ledger, cache) {
    client.set_sleeper([this](std::chrono::milliseconds d) { sleeps.push_back(d); });
  }
};

}  // namespace

TEST_CASE("parse_binary_choice") {
  CHECK(parse_binary_choice("The first one.") == Choice::kFirst);
  CHECK(parse_binary_choice("SECOND") == Choice::kSecond);
  CHECK(parse_binary_choice("<choose>second</choose> though the first is close") == Choice::kSecond);
  CHECK(parse_binary_choice("the first or the second") == Choice::kUnparseable);
  CHECK(parse_binary_choice("no idea") == Choice::kUnparseable);
  CHECK(parse_binary_choice("firstly") == Choice::kUnparseable);
}

TEST_CASE("parse_option_letter") {
  CHECK(parse_option_letter("The answer is: B", 3) == 1);
  CHECK(parse_option_letter("B) because", 3) == 1);
  CHECK_FALSE(parse_option_letter("The answer is: D", 3).has_value());
  CHECK(parse_option_letter("I think C", 3) == 2);
  CHECK_FALSE(parse_option_letter("none", 3).has_value());
}

TEST_CASE("extract_tagged returns the trimmed block") {
  CHECK(extract_tagged("x <START>\n  new prompt \n<END> y", "<START>", "<END>") == "new prompt");
  CHECK_FALSE(extract_tagged("<START> unterminated", "<START>", "<END>").has_value());
  CHECK_FALSE(extract_tagged("nothing", "<START>", "<END>").has_value());
}

TEST_CASE("request kinds round trip through their names") {
  for (auto k : {RequestKind::kDescribe, RequestKind::kBinaryChoice, RequestKind::kClassify, RequestKind::kReflect,
                 RequestKind::kModify}) {
    CHECK(parse_request_kind(to_string(k)) == k);
  }
  CHECK_THROWS(parse_request_kind("bogus"));
}

TEST_CASE("request validation") {
  BackendRequest r;
  r.kind = RequestKind::kDescribe;
  r.prompt_text = "p";
  CHECK_THROWS_AS(r.validate(), ConfigError);
  CHECK_NOTHROW(reflect_request().validate());
  auto bad = reflect_request();
  bad.prompt_text.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("a call that succeeds first time is ledgered once as ok") {
  Harness h({reply("fine")});
  CHECK(h.client.complete(reflect_request(), {4, "fp"}) == "fine");
  const auto records = h.ledger.records();
  REQUIRE(records.size() == 1);
  CHECK(records[0].outcome == CallOutcome::kOk);
  CHECK(records[0].iteration == 4);
  CHECK(records[0].prompt_fingerprint == "fp");
  CHECK(records[0].prompt_tokens == 12);
  CHECK(h.sleeps.empty());
}

TEST_CASE("transient failures are retried with exponential backoff and ledgered once") {
  Harness h({transient(), transient(), reply("ok")});
  CHECK(h.client.complete(reflect_request(), {0, ""}) == "ok");
  const auto records = h.ledger.records();
  REQUIRE(records.size() == 1);
  CHECK(records[0].outcome == CallOutcome::kRetried);
  REQUIRE(h.sleeps.size() == 2);
  CHECK(h.sleeps[0] == std::chrono::milliseconds(1000));
  CHECK(h.sleeps[1] == std::chrono::milliseconds(2000));
  CHECK(h.backend.seen.size() == 3);
}

TEST_CASE("exhausted retries raise BackendError with one failed record") {
  Harness h({transient(), transient(), transient(), transient(), reply("too late")});
  CHECK_THROWS_AS(h.client.complete(reflect_request(), {0, ""}), BackendError);
  const auto records = h.ledger.records();
  REQUIRE(records.size() == 1);
  CHECK(records[0].outcome == CallOutcome::kFailed);
  CHECK(h.backend.seen.size() == 4);
  CHECK(h.sleeps.size() == 3);
}

TEST_CASE("non-retryable errors are not retried") {
  Harness h({fatal(), reply("never")});
  CHECK_THROWS_AS(h.client.complete(reflect_request(), {0, ""}), BackendError);
  CHECK(h.backend.seen.size() == 1);
  CHECK(h.ledger.records().at(0).outcome == CallOutcome::kFailed);
}

TEST_CASE("describe goes through the cache and treats empty output as transient") {
  testing::TempDir dir;
  atomic_write(dir / "a.png", "bytes");
  atomic_write(dir / "b.png", "bytes");
  const ImageRef a("a", dir / "a.png");
  const ImageRef b("b", dir / "b.png");
  Harness h({reply("  "), reply("a striped bird "), reply("")});
  h.client.set_sleeper([](std::chrono::milliseconds) {});
  const auto p = PromptCandidate::make("Describe it.");

  const auto d = h.client.describe(a, p, {1, ""});
  CHECK(d.text == "a striped bird");
  CHECK(d.model_id == "scripted");
  CHECK(h.ledger.size() == 1);
  CHECK(h.ledger.records()[0].outcome == CallOutcome::kRetried);
  CHECK(h.ledger.records()[0].prompt_fingerprint == p.fingerprint);
  CHECK(h.backend.seen[0].images.at(0).mime_type == "image/png");

  CHECK(h.client.describe(a, p, {2, ""}).text == "a striped bird");
  CHECK(h.ledger.size() == 1);

  // Empty replies for every attempt end in DescribeFailed.
  Harness failing({reply(""), reply(""), reply(""), reply("")});
  failing.client.set_sleeper([](std::chrono::milliseconds) {});
  CHECK_THROWS_AS(failing.client.describe(b, p, {0, ""}), DescribeFailed);
}

TEST_CASE("binary_choice retries one unparseable reply") {
  testing::TempDir dir;
  atomic_write(dir / "a.png", "x");
  const ImageRef a("a", dir / "a.png");
  Harness h({reply("hmm"), reply("The second")});
  CHECK(h.client.binary_choice(a, "one", "two", {0, ""}) == Choice::kSecond);
  CHECK(h.ledger.size() == 2);

  Harness never({reply("hmm"), reply("still unsure")});
  CHECK(never.client.binary_choice(a, "one", "two", {0, ""}) == Choice::kUnparseable);
}

TEST_CASE("classify returns the option index or abstains") {
  testing::TempDir dir;
  atomic_write(dir / "a.png", "x");
  const ImageRef a("a", dir / "a.png");
  const TaskSpec task{"bird", "", {"x", "y", "z"}};
  Harness h({reply("The answer is: C"), reply("?"), reply("??")});
  CHECK(h.client.classify(a, task, nullptr, {0, ""}) == 2);
  CHECK_FALSE(h.client.classify(a, task, nullptr, {0, ""}).has_value());
  CHECK(h.backend.seen[0].temperature == 0.0);
}

TEST_CASE("ledger persists, verifies and truncates on resume") {
  testing::TempDir dir;
  const auto file = dir / "queries.log";
  {
    QueryLedger ledger(file, 0);
    for (int i = 0; i < 5; ++i) ledger.append(QueryRecord{0, RequestKind::kDescribe, "fp", {"img"}, i});
  }
  auto records = QueryLedger::read_file(file);
  REQUIRE(records.size() == 5);
  CHECK_NOTHROW(QueryLedger::verify(records));
  CHECK(records[3].seq == 3);

  QueryLedger resumed(file, 3);
  CHECK(resumed.size() == 3);
  CHECK(resumed.append(QueryRecord{}).seq == 3);
  CHECK(QueryLedger::read_file(file).size() == 4);

  records.erase(records.begin() + 1);
  CHECK_THROWS_AS(QueryLedger::verify(records), DataError);
  CHECK_THROWS_AS(QueryLedger(dir / "absent.log", 2), DataError);
}

TEST_CASE("query_count filters by iteration and kind") {
  QueryLedger ledger;
  ledger.append(QueryRecord{0, RequestKind::kDescribe, "", {}, 1});
  ledger.append(QueryRecord{0, RequestKind::kReflect, "", {}, 1});
  ledger.append(QueryRecord{0, RequestKind::kReflect, "", {}, 2});
  CHECK(query_count(ledger, 1) == 2);
  const RequestKind reflect[] = {RequestKind::kReflect};
  CHECK(query_count(ledger, 1, reflect) == 1);
  CHECK(query_count(ledger, 3) == 0);
}

TEST_CASE("description cache is write-once, keyed by model, and persistent") {
  testing::TempDir dir;
  const auto file = dir / "descriptions.jsonl";
  {
    DescriptionCache cache(file);
    CHECK(cache.put({"img", "fp", "first text", "m1"}));
    CHECK_FALSE(cache.put({"img", "fp", "second text", "m1"}));
    CHECK(cache.get("img", "fp", "m1")->text == "first text");
    CHECK_FALSE(cache.get("img", "fp", "m2").has_value());
  }
  DescriptionCache reloaded(file);
  CHECK(reloaded.size() == 1);
  CHECK(reloaded.get("img", "fp", "m1")->text == "first text");

  // A torn final line is ignored.
  {
    std::ofstream out(file, std::ios::app);
    out << "{\"image_id\": \"x\", \"prom";
  }
  CHECK(DescriptionCache(file).size() == 1);
}

TEST_CASE("QueryRecord JSON round trip") {
  QueryRecord r{7, RequestKind::kModify, "fp", {"a", "b"}, 3, 12.5, 10, std::nullopt, CallOutcome::kRetried};
  auto back = nlohmann::json(r).get<QueryRecord>();
  CHECK(back.seq == 7);
  CHECK(back.kind == RequestKind::kModify);
  CHECK(back.image_ids == std::vector<std::string>{"a", "b"});
  CHECK(back.prompt_tokens == 10);
  CHECK_FALSE(back.completion_tokens.has_value());
  CHECK(back.outcome == CallOutcome::kRetried);
}
