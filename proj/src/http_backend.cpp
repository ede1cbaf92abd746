#include "autosep/http_backend.hpp"

#include <openssl/evp.h>

#include <cstdlib>
#include <regex>

#include "autosep/errors.hpp"
#include "httplib.h"

namespace autosep {

void to_json(nlohmann::json& j, const HttpBackendConfig& c) {
  j = {{"base_url", c.base_url}, {"model", c.model}, {"api_key_env", c.api_key_env}, {"timeout_seconds", c.timeout_seconds}};
}

void from_json(const nlohmann::json& j, HttpBackendConfig& c) {
  c.base_url = j.at("base_url").get<std::string>();
  c.model = j.at("model").get<std::string>();
  c.api_key_env = j.value("api_key_env", std::string("OPENAI_API_KEY"));
  c.timeout_seconds = j.value("timeout_seconds", 60);
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int written = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                      reinterpret_cast<const unsigned char*>(bytes.data()),
                                      static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(written));
  return out;
}

nlohmann::json build_chat_body(const std::string& model, const BackendRequest& request) {
  nlohmann::json message = {{"role", "user"}};
  if (request.images.empty()) {
    message["content"] = request.prompt_text;
  } else {
    auto parts = nlohmann::json::array();
    parts.push_back({{"type", "text"}, {"text", request.prompt_text}});
    for (const auto& image : request.images) {
      parts.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:" + image.mime_type + ";base64," + base64_encode(image.bytes)}}}});
    }
    message["content"] = std::move(parts);
  }
  return {{"model", model},
          {"messages", nlohmann::json::array({message})},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens}};
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  static const std::regex kUrl(R"((https?)://([^/]+)(/.*)?)");
  std::smatch m;
  if (!std::regex_match(config_.base_url, m, kUrl)) {
    throw ConfigError("backend base_url must look like http(s)://host[:port][/path], got '" + config_.base_url + "'");
  }
  if (config_.model.empty()) throw ConfigError("backend model must be set");
  scheme_host_port_ = m[1].str() + "://" + m[2].str();
  path_prefix_ = m[3].matched ? m[3].str() : "";
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
}

BackendReply HttpBackend::send(const BackendRequest& request) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  client.set_write_timeout(config_.timeout_seconds, 0);
  client.set_follow_location(true);

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const std::string body = build_chat_body(config_.model, request).dump();
  auto res = client.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
  if (!res) throw TransientError("transport error: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500) {
    throw TransientError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  if (res->status != 200) {
    throw BackendError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500));
  }

  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw TransientError(std::string("malformed response body: ") + e.what());
  }
  BackendReply out;
  const auto& choices = reply.value("choices", nlohmann::json::array());
  if (!choices.empty()) {
    const auto& content = choices[0].value("message", nlohmann::json::object()).value("content", nlohmann::json());
    if (content.is_string()) out.text = content.get<std::string>();
  }
  if (out.text.empty()) throw TransientError("empty completion content");
  if (reply.contains("usage") && reply["usage"].is_object()) {
    const auto& usage = reply["usage"];
    if (usage.contains("prompt_tokens")) out.prompt_tokens = usage["prompt_tokens"].get<int>();
    if (usage.contains("completion_tokens")) out.completion_tokens = usage["completion_tokens"].get<int>();
  }
  return out;
}

}  // namespace autosep
