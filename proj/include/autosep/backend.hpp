#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "autosep/core.hpp"
#include "autosep/storage.hpp"
#include "autosep/templates.hpp"

namespace autosep {

enum class RequestKind { kDescribe, kBinaryChoice, kClassify, kReflect, kModify };

std::string_view to_string(RequestKind kind);
RequestKind parse_request_kind(std::string_view name);

struct ImagePayload {
  std::string image_id;
  std::string bytes;
  std::string mime_type;
};

/// Reads the image file behind `image`; mime type from the extension.
ImagePayload load_payload(const ImageRef& image);

struct BackendRequest {
  RequestKind kind = RequestKind::kDescribe;
  std::vector<ImagePayload> images;
  std::string prompt_text;
  double temperature = 0.0;
  int max_tokens = 512;
  /// Distinguishes repeated samples of the same request (majority vote).
  /// Real APIs ignore it; the mock uses it as its sampling nonce.
  int sample_index = 0;

  /// Throws ConfigError when the shape is invalid for the kind.
  void validate() const;
};

struct BackendReply {
  std::string text;
  std::optional<int> prompt_tokens;
  std::optional<int> completion_tokens;
};

/// One multimodal model endpoint. `send` performs a single attempt and
/// throws TransientError for retryable failures and BackendError otherwise.
/// Implementations must be safe to call concurrently.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string model_id() const = 0;
  virtual BackendReply send(const BackendRequest& request) = 0;
};

enum class CallOutcome { kOk, kRetried, kFailed };

struct QueryRecord {
  std::uint64_t seq = 0;
  RequestKind kind = RequestKind::kDescribe;
  std::string prompt_fingerprint;
  std::vector<std::string> image_ids;
  int iteration = 0;
  double wall_time_ms = 0.0;
  std::optional<int> prompt_tokens;
  std::optional<int> completion_tokens;
  CallOutcome outcome = CallOutcome::kOk;
};

void to_json(nlohmann::json& j, const QueryRecord& r);
void from_json(const nlohmann::json& j, QueryRecord& r);

/// Append-only record of every backend call that reached the backend.
/// Sequence numbers are assigned atomically under the ledger lock.
class QueryLedger {
 public:
  QueryLedger() = default;
  /// Persists each record as one JSON line appended to `file`. Existing
  /// records with seq >= `next_seq` are dropped (they belong to work that a
  /// resumed run will redo).
  QueryLedger(std::filesystem::path file, std::uint64_t next_seq);

  QueryRecord append(QueryRecord record);
  std::vector<QueryRecord> records() const;
  std::uint64_t next_seq() const;
  std::size_t size() const;

  /// Reads a ledger file, failing on malformed lines.
  static std::vector<QueryRecord> read_file(const std::filesystem::path& file);
  /// Throws DataError on non-consecutive sequence numbers.
  static void verify(const std::vector<QueryRecord>& records);

 private:
  mutable std::mutex mutex_;
  std::vector<QueryRecord> records_;
  std::uint64_t next_seq_ = 0;
  std::optional<std::filesystem::path> file_;
};

/// Number of calls logged for `iteration` whose kind is in `kinds` (all
/// kinds when empty). Cache hits never reach the ledger.
std::int64_t query_count(const QueryLedger& ledger, int iteration, std::span<const RequestKind> kinds = {});

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
};

struct GenerationSettings {
  double describe_temperature = 0.0;
  double judge_temperature = 0.0;
  double classify_temperature = 0.0;
  double edit_temperature = 0.7;
  int describe_max_tokens = 512;
  int judge_max_tokens = 64;
  int classify_max_tokens = 32;
  int edit_max_tokens = 1024;
};

struct CallContext {
  int iteration = 0;
  std::string prompt_fingerprint;
};

enum class Choice { kFirst, kSecond, kUnparseable };

/// A <choose>..</choose> block wins; otherwise exactly one of the words
/// "first" / "second" (any case) must occur.
Choice parse_binary_choice(std::string_view reply);

/// First standalone capital letter that names one of the options.
std::optional<int> parse_option_letter(std::string_view reply, std::size_t num_options);

/// Text between the first `open` and the following `close` tag, trimmed.
std::optional<std::string> extract_tagged(std::string_view reply, std::string_view open, std::string_view close);

/// Typed operations over a Backend: retries, ledgering, the description
/// cache and reply parsing.
class Client {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Client(Backend& backend, QueryLedger& ledger, DescriptionCache& cache, TemplateStore templates = {},
         RetryPolicy retry = {}, GenerationSettings generation = {});

  /// Raw reply for one logical call; throws BackendError once retries are
  /// exhausted. Exactly one ledger record per call.
  std::string complete(const BackendRequest& request, const CallContext& context);

  /// Cached description of `image` under `prompt`; throws DescribeFailed.
  Description describe(const ImageRef& image, const PromptCandidate& prompt, const CallContext& context);

  /// Unparseable replies are retried once.
  Choice binary_choice(const ImageRef& image, std::string_view first_text, std::string_view second_text,
                       const CallContext& context);

  /// Class index or nullopt (abstain) after one retry on an unparseable
  /// reply. `description == nullptr` renders the vanilla zero-shot prompt.
  std::optional<int> classify(const ImageRef& image, const TaskSpec& task, const std::string* description,
                              const CallContext& context, const std::string* extra_context = nullptr,
                              std::optional<double> temperature = std::nullopt, int sample_index = 0);

  /// Classification over several images (context images then target) with a
  /// caller-rendered prompt.
  std::optional<int> classify_images(const std::vector<ImageRef>& images, const std::string& prompt,
                                     std::size_t num_options, const CallContext& context,
                                     std::optional<double> temperature = std::nullopt, int sample_index = 0);

  const TemplateStore& templates() const { return templates_; }
  const GenerationSettings& generation() const { return generation_; }
  std::string model_id() const { return backend_.model_id(); }
  QueryLedger& ledger() { return ledger_; }
  DescriptionCache& cache() { return cache_; }
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

 private:
  std::string call(const BackendRequest& request, const CallContext& context, bool empty_is_failure);

  Backend& backend_;
  QueryLedger& ledger_;
  DescriptionCache& cache_;
  TemplateStore templates_;
  RetryPolicy retry_;
  GenerationSettings generation_;
  Sleeper sleeper_;
};

}  // namespace autosep
