#pragma once

#include <string>

#include "autosep/backend.hpp"

namespace autosep {

struct HttpBackendConfig {
  /// e.g. "https://api.openai.com/v1"; "/chat/completions" is appended.
  std::string base_url;
  std::string model;
  /// Name of the environment variable holding the bearer token. An unset or
  /// empty variable sends no Authorization header.
  std::string api_key_env = "OPENAI_API_KEY";
  int timeout_seconds = 60;
};

void to_json(nlohmann::json& j, const HttpBackendConfig& c);
void from_json(const nlohmann::json& j, HttpBackendConfig& c);

std::string base64_encode(std::string_view bytes);

/// Chat-completions request body for `request` (images as base64 data URLs
/// after the text part; plain string content when there are no images).
nlohmann::json build_chat_body(const std::string& model, const BackendRequest& request);

/// OpenAI-compatible chat+vision client. One POST per attempt; 429, 5xx,
/// transport errors and empty content are reported as TransientError.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

  std::string model_id() const override { return config_.model; }
  BackendReply send(const BackendRequest& request) override;

 private:
  HttpBackendConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::string api_key_;
};

}  // namespace autosep
