#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "autosep/backend.hpp"
#include "autosep/errors.hpp"
#include "autosep/http_backend.hpp"
#include "autosep/storage.hpp"
#include "doctest.h"
#include "httplib.h"
#include "support.hpp"

using namespace autosep;

namespace {

/// Local chat-completions stub. `statuses` are served in order, then 200s.
class StubServer {
 public:
  explicit StubServer(std::vector<int> statuses) : statuses_(std::move(statuses)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mutex_);
      bodies.push_back(req.body);
      authorization.push_back(req.get_header_value("Authorization"));
      const int status = hits_ < statuses_.size() ? statuses_[hits_] : 200;
      ++hits_;
      res.status = status;
      if (status == 200) {
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"The first"}}],)"
                        R"("usage":{"prompt_tokens":21,"completion_tokens":2}})",
                        "application/json");
      } else {
        res.set_content(R"({"error":"nope"})", "application/json");
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  std::size_t hits() const {
    std::lock_guard lock(mutex_);
    return hits_;
  }

  std::vector<std::string> bodies;
  std::vector<std::string> authorization;

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mutex_;
  std::vector<int> statuses_;
  std::size_t hits_ = 0;
};

BackendRequest text_only() {
  BackendRequest r;
  r.kind = RequestKind::kReflect;
  r.prompt_text = "reflect on this";
  r.temperature = 0.7;
  r.max_tokens = 100;
  return r;
}

}  // namespace

TEST_CASE("base64 encoding") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  CHECK(base64_encode(std::string("\0\xff", 2)) == "AP8=");
}

TEST_CASE("chat body without images uses plain string content") {
  const auto body = build_chat_body("gpt-x", text_only());
  CHECK(body.at("model") == "gpt-x");
  CHECK(body.at("messages").size() == 1);
  CHECK(body.at("messages")[0].at("role") == "user");
  CHECK(body.at("messages")[0].at("content").is_string());
  CHECK(body.at("messages")[0].at("content") == "reflect on this");
  CHECK(body.at("temperature") == 0.7);
  CHECK(body.at("max_tokens") == 100);
}

TEST_CASE("chat body with images has a text part followed by data URLs in order") {
  BackendRequest r;
  r.kind = RequestKind::kClassify;
  r.prompt_text = "which?";
  r.images = {{"a", "abc", "image/png"}, {"b", "xyz", "image/jpeg"}};
  const auto content = build_chat_body("m", r).at("messages")[0].at("content");
  REQUIRE(content.is_array());
  REQUIRE(content.size() == 3);
  CHECK(content[0].at("type") == "text");
  CHECK(content[0].at("text") == "which?");
  CHECK(content[1].at("image_url").at("url") == "data:image/png;base64,YWJj");
  CHECK(content[2].at("image_url").at("url") == "data:image/jpeg;base64,eHl6");
}

TEST_CASE("base_url must be an http(s) URL") {
  CHECK_THROWS_AS(HttpBackend({"ftp://x", "m"}), ConfigError);
  CHECK_THROWS_AS(HttpBackend({"http://x", ""}), ConfigError);
  CHECK_NOTHROW(HttpBackend({"https://api.example.com/v1/", "m"}));
}

TEST_CASE("a 429 followed by success is one ledger record with outcome retried") {
  StubServer server({429});
  ::setenv("AUTOSEP_TEST_KEY", "sekrit", 1);
  HttpBackendConfig config{server.base_url(), "vision-model", "AUTOSEP_TEST_KEY", 5};
  HttpBackend backend(config);
  QueryLedger ledger;
  DescriptionCache cache;
  Client client(backend, ledger, cache);
  std::vector<std::chrono::milliseconds> sleeps;
  client.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });

  CHECK(client.complete(text_only(), {1, "fp"}) == "The first");
  CHECK(server.hits() == 2);
  REQUIRE(ledger.size() == 1);
  const auto record = ledger.records().front();
  CHECK(record.outcome == CallOutcome::kRetried);
  CHECK(record.prompt_tokens == 21);
  CHECK(record.completion_tokens == 2);
  CHECK(sleeps == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(1000)});
  CHECK(server.authorization.at(0) == "Bearer sekrit");

  const auto sent = nlohmann::json::parse(server.bodies.at(0));
  CHECK(sent.at("model") == "vision-model");
  CHECK(sent.at("messages")[0].at("content").is_string());
}

TEST_CASE("5xx is retried until the budget runs out") {
  StubServer server({500, 502, 503, 504, 500});
  HttpBackend backend({server.base_url(), "m", "AUTOSEP_UNSET_KEY_VAR", 5});
  QueryLedger ledger;
  DescriptionCache cache;
  Client client(backend, ledger, cache);
  client.set_sleeper([](std::chrono::milliseconds) {});
  CHECK_THROWS_AS(client.complete(text_only(), {0, ""}), BackendError);
  CHECK(server.hits() == 4);
  CHECK(ledger.size() == 1);
  CHECK(ledger.records().front().outcome == CallOutcome::kFailed);
  CHECK(server.authorization.at(0).empty());
}

TEST_CASE("other 4xx responses fail without retry") {
  StubServer server({400});
  HttpBackend backend({server.base_url(), "m", "AUTOSEP_UNSET_KEY_VAR", 5});
  QueryLedger ledger;
  DescriptionCache cache;
  Client client(backend, ledger, cache);
  client.set_sleeper([](std::chrono::milliseconds) {});
  CHECK_THROWS_AS(client.complete(text_only(), {0, ""}), BackendError);
  CHECK(server.hits() == 1);
}

TEST_CASE("images reach the server as data URLs") {
  testing::TempDir dir;
  atomic_write(dir / "bird.jpg", "JPEGDATA");
  StubServer server({});
  HttpBackend backend({server.base_url(), "m", "AUTOSEP_UNSET_KEY_VAR", 5});
  QueryLedger ledger;
  DescriptionCache cache;
  Client client(backend, ledger, cache);
  const ImageRef image("bird", dir / "bird.jpg");
  CHECK(client.binary_choice(image, "one", "two", {0, ""}) == Choice::kFirst);
  const auto sent = nlohmann::json::parse(server.bodies.at(0));
  const auto& content = sent.at("messages")[0].at("content");
  REQUIRE(content.size() == 2);
  CHECK(content[1].at("image_url").at("url") == "data:image/jpeg;base64," + base64_encode("JPEGDATA"));
  CHECK(ledger.records().front().image_ids == std::vector<std::string>{"bird"});
}

TEST_CASE("unreachable endpoints are transient") {
  HttpBackend backend({"http://127.0.0.1:1", "m", "AUTOSEP_UNSET_KEY_VAR", 1});
  CHECK_THROWS_AS(backend.send(text_only()), TransientError);
}
