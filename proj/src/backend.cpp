#include "autosep/backend.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include "autosep/errors.hpp"

namespace autosep {

namespace fs = std::filesystem;

namespace {

constexpr std::pair<RequestKind, std::string_view> kKindNames[] = {
    {RequestKind::kDescribe, "describe"},   {RequestKind::kBinaryChoice, "binary_choice"},
    {RequestKind::kClassify, "classify"},   {RequestKind::kReflect, "reflect"},
    {RequestKind::kModify, "modify"},
};

constexpr std::pair<CallOutcome, std::string_view> kOutcomeNames[] = {
    {CallOutcome::kOk, "ok"}, {CallOutcome::kRetried, "retried"}, {CallOutcome::kFailed, "failed"}};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool word_at(const std::string& text, std::size_t pos, std::size_t len) {
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  if (pos > 0 && alnum(text[pos - 1])) return false;
  if (pos + len < text.size() && alnum(text[pos + len])) return false;
  return true;
}

bool contains_word(const std::string& text, std::string_view word) {
  for (auto pos = text.find(word); pos != std::string::npos; pos = text.find(word, pos + 1)) {
    if (word_at(text, pos, word.size())) return true;
  }
  return false;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view to_string(RequestKind kind) {
  for (auto [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

RequestKind parse_request_kind(std::string_view name) {
  for (auto [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw DataError("unknown request kind '" + std::string(name) + "'");
}

ImagePayload load_payload(const ImageRef& image) {
  std::ifstream in(image.path(), std::ios::binary);
  if (!in) throw DataError("cannot read image '" + image.id() + "' at " + image.path().string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string ext = lower(image.path().extension().string());
  std::string mime = "application/octet-stream";
  if (ext == ".jpg" || ext == ".jpeg") mime = "image/jpeg";
  else if (ext == ".png") mime = "image/png";
  else if (ext == ".webp") mime = "image/webp";
  else if (ext == ".gif") mime = "image/gif";
  return ImagePayload{image.id(), ss.str(), mime};
}

void BackendRequest::validate() const {
  const bool needs_image =
      kind == RequestKind::kDescribe || kind == RequestKind::kBinaryChoice || kind == RequestKind::kClassify;
  if (needs_image && images.empty()) {
    throw ConfigError(std::string(to_string(kind)) + " request needs at least one image");
  }
  if (prompt_text.empty()) throw ConfigError("request prompt is empty");
  if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (max_tokens < 1) throw ConfigError("max_tokens must be positive");
}

// --- ledger ------------------------------------------------------------------

void to_json(nlohmann::json& j, const QueryRecord& r) {
  j = {{"seq", r.seq},
       {"kind", to_string(r.kind)},
       {"prompt_fingerprint", r.prompt_fingerprint},
       {"image_ids", r.image_ids},
       {"iteration", r.iteration},
       {"wall_time_ms", r.wall_time_ms}};
  for (auto [o, name] : kOutcomeNames) {
    if (o == r.outcome) j["outcome"] = name;
  }
  if (r.prompt_tokens) j["prompt_tokens"] = *r.prompt_tokens;
  if (r.completion_tokens) j["completion_tokens"] = *r.completion_tokens;
}

void from_json(const nlohmann::json& j, QueryRecord& r) {
  r.seq = j.at("seq").get<std::uint64_t>();
  r.kind = parse_request_kind(j.at("kind").get<std::string>());
  r.prompt_fingerprint = j.at("prompt_fingerprint").get<std::string>();
  r.image_ids = j.at("image_ids").get<std::vector<std::string>>();
  r.iteration = j.at("iteration").get<int>();
  r.wall_time_ms = j.at("wall_time_ms").get<double>();
  const auto outcome = j.at("outcome").get<std::string>();
  bool known = false;
  for (auto [o, name] : kOutcomeNames) {
    if (name == outcome) {
      r.outcome = o;
      known = true;
    }
  }
  if (!known) throw DataError("unknown outcome '" + outcome + "'");
  r.prompt_tokens = j.contains("prompt_tokens") ? std::optional<int>(j["prompt_tokens"].get<int>()) : std::nullopt;
  r.completion_tokens =
      j.contains("completion_tokens") ? std::optional<int>(j["completion_tokens"].get<int>()) : std::nullopt;
}

QueryLedger::QueryLedger(fs::path file, std::uint64_t next_seq) : next_seq_(next_seq), file_(std::move(file)) {
  if (fs::exists(*file_)) {
    auto existing = read_file(*file_);
    std::erase_if(existing, [&](const QueryRecord& r) { return r.seq >= next_seq; });
    verify(existing);
    if (existing.size() != next_seq) {
      throw DataError("ledger " + file_->string() + " holds " + std::to_string(existing.size()) +
                      " records but the run expects " + std::to_string(next_seq));
    }
    std::string content;
    for (const auto& r : existing) content += nlohmann::json(r).dump() + "\n";
    atomic_write(*file_, content);
    records_ = std::move(existing);
  } else if (next_seq != 0) {
    throw DataError("ledger " + file_->string() + " is missing");
  }
}

QueryRecord QueryLedger::append(QueryRecord record) {
  std::lock_guard lock(mutex_);
  record.seq = next_seq_++;
  if (file_) {
    std::ofstream out(*file_, std::ios::app);
    if (!out) throw DataError("cannot append to ledger " + file_->string());
    out << nlohmann::json(record).dump() << '\n';
  }
  records_.push_back(record);
  return record;
}

std::vector<QueryRecord> QueryLedger::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::uint64_t QueryLedger::next_seq() const {
  std::lock_guard lock(mutex_);
  return next_seq_;
}

std::size_t QueryLedger::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

std::vector<QueryRecord> QueryLedger::read_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot read ledger " + file.string());
  std::vector<QueryRecord> out;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<QueryRecord>());
    } catch (const std::exception& e) {
      throw DataError("malformed ledger line " + std::to_string(row) + " in " + file.string() + ": " + e.what());
    }
  }
  return out;
}

void QueryLedger::verify(const std::vector<QueryRecord>& records) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].seq != i) {
      throw DataError("ledger sequence gap: expected seq " + std::to_string(i) + ", found " +
                      std::to_string(records[i].seq));
    }
  }
}

std::int64_t query_count(const QueryLedger& ledger, int iteration, std::span<const RequestKind> kinds) {
  std::int64_t count = 0;
  for (const auto& r : ledger.records()) {
    if (r.iteration != iteration) continue;
    if (!kinds.empty() && std::find(kinds.begin(), kinds.end(), r.kind) == kinds.end()) continue;
    ++count;
  }
  return count;
}

// --- parsers -----------------------------------------------------------------

Choice parse_binary_choice(std::string_view reply) {
  std::string text = lower(reply);
  if (auto tagged = extract_tagged(text, "<choose>", "</choose>")) text = *tagged;
  const bool first = contains_word(text, "first");
  const bool second = contains_word(text, "second");
  if (first == second) return Choice::kUnparseable;
  return first ? Choice::kFirst : Choice::kSecond;
}

std::optional<int> parse_option_letter(std::string_view reply, std::size_t num_options) {
  const std::string text(reply);
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c < 'A' || c > 'Z' || !word_at(text, i, 1)) continue;
    auto index = static_cast<std::size_t>(c - 'A');
    if (index < num_options) return static_cast<int>(index);
  }
  return std::nullopt;
}

std::optional<std::string> extract_tagged(std::string_view reply, std::string_view open, std::string_view close) {
  auto b = reply.find(open);
  if (b == std::string_view::npos) return std::nullopt;
  b += open.size();
  auto e = reply.find(close, b);
  if (e == std::string_view::npos) return std::nullopt;
  return trim(reply.substr(b, e - b));
}

// --- client ------------------------------------------------------------------

Client::Client(Backend& backend, QueryLedger& ledger, DescriptionCache& cache, TemplateStore templates,
               RetryPolicy retry, GenerationSettings generation)
    : backend_(backend),
      ledger_(ledger),
      cache_(cache),
      templates_(std::move(templates)),
      retry_(retry),
      generation_(generation),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

std::string Client::call(const BackendRequest& request, const CallContext& context, bool empty_is_failure) {
  request.validate();
  QueryRecord record;
  record.kind = request.kind;
  record.prompt_fingerprint = context.prompt_fingerprint;
  record.iteration = context.iteration;
  for (const auto& image : request.images) record.image_ids.push_back(image.image_id);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };
  auto backoff = retry_.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= retry_.max_retries; ++attempt) {
    if (attempt > 0) {
      sleeper_(backoff);
      backoff = std::chrono::milliseconds(static_cast<std::int64_t>(static_cast<double>(backoff.count()) * retry_.multiplier));
    }
    try {
      BackendReply reply = backend_.send(request);
      if (empty_is_failure && trim(reply.text).empty()) throw TransientError("empty model output");
      record.outcome = attempt == 0 ? CallOutcome::kOk : CallOutcome::kRetried;
      record.prompt_tokens = reply.prompt_tokens;
      record.completion_tokens = reply.completion_tokens;
      record.wall_time_ms = elapsed_ms();
      ledger_.append(std::move(record));
      return std::move(reply.text);
    } catch (const TransientError& e) {
      last_error = e.what();
    } catch (const BackendError& e) {
      record.outcome = CallOutcome::kFailed;
      record.wall_time_ms = elapsed_ms();
      ledger_.append(std::move(record));
      throw;
    }
  }
  record.outcome = CallOutcome::kFailed;
  record.wall_time_ms = elapsed_ms();
  ledger_.append(std::move(record));
  throw BackendError(std::string(to_string(request.kind)) + " call failed after " +
                     std::to_string(retry_.max_retries + 1) + " attempts: " + last_error);
}

std::string Client::complete(const BackendRequest& request, const CallContext& context) {
  return call(request, context, false);
}

Description Client::describe(const ImageRef& image, const PromptCandidate& prompt, const CallContext& context) {
  const std::string model = backend_.model_id();
  if (auto hit = cache_.get(image.id(), prompt.fingerprint, model)) return *hit;

  BackendRequest request;
  request.kind = RequestKind::kDescribe;
  request.images.push_back(load_payload(image));
  request.prompt_text = prompt.text;
  request.temperature = generation_.describe_temperature;
  request.max_tokens = generation_.describe_max_tokens;
  CallContext ctx = context;
  ctx.prompt_fingerprint = prompt.fingerprint;

  Description d;
  try {
    d.text = trim(call(request, ctx, true));
  } catch (const BackendError& e) {
    throw DescribeFailed("describe failed for image '" + image.id() + "': " + e.what());
  }
  d.image_id = image.id();
  d.prompt_fingerprint = prompt.fingerprint;
  d.model_id = model;
  cache_.put(d);
  // Another thread may have stored the key first; the stored entry wins.
  return cache_.get(image.id(), prompt.fingerprint, model).value_or(d);
}

Choice Client::binary_choice(const ImageRef& image, std::string_view first_text, std::string_view second_text,
                             const CallContext& context) {
  if (first_text.empty() || second_text.empty()) throw ConfigError("binary_choice needs two non-empty texts");
  BackendRequest request;
  request.kind = RequestKind::kBinaryChoice;
  request.images.push_back(load_payload(image));
  request.prompt_text = templates_.binary_choice(first_text, second_text);
  request.temperature = generation_.judge_temperature;
  request.max_tokens = generation_.judge_max_tokens;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Choice c = parse_binary_choice(complete(request, context));
    if (c != Choice::kUnparseable) return c;
  }
  return Choice::kUnparseable;
}

std::optional<int> Client::classify(const ImageRef& image, const TaskSpec& task, const std::string* description,
                                    const CallContext& context, const std::string* extra_context,
                                    std::optional<double> temperature, int sample_index) {
  std::string prompt = templates_.classification(task, description);
  if (extra_context && !extra_context->empty()) prompt = *extra_context + "\n\n" + prompt;
  return classify_images({image}, prompt, task.num_classes(), context, temperature, sample_index);
}

std::optional<int> Client::classify_images(const std::vector<ImageRef>& images, const std::string& prompt,
                                           std::size_t num_options, const CallContext& context,
                                           std::optional<double> temperature, int sample_index) {
  BackendRequest request;
  request.kind = RequestKind::kClassify;
  for (const auto& image : images) request.images.push_back(load_payload(image));
  request.prompt_text = prompt;
  request.temperature = temperature.value_or(generation_.classify_temperature);
  request.max_tokens = generation_.classify_max_tokens;
  request.sample_index = sample_index;
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (auto letter = parse_option_letter(complete(request, context), num_options)) return letter;
  }
  return std::nullopt;
}

}  // namespace autosep
