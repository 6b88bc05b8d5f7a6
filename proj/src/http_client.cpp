#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "elemental/error.hpp"
#include "elemental/llm.hpp"

namespace elemental {

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

HttpLlmClient::HttpLlmClient(HttpClientConfig config) : config_(std::move(config)) {
  const auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigurationError("endpoint must be an absolute URL: " + config_.endpoint);
  }
  const auto path_start = config_.endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host_port_ = config_.endpoint;
    path_ = "/v1/chat/completions";
  } else {
    scheme_host_port_ = config_.endpoint.substr(0, path_start);
    path_ = config_.endpoint.substr(path_start);
  }
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw ConfigurationError("environment variable " + config_.api_key_env + " is not set");
    }
    api_key_ = key;
  }
  if (config_.max_retries < 0) throw ConfigurationError("max_retries must be >= 0");
  if (!(config_.timeout_seconds > 0)) throw ConfigurationError("timeout must be positive");
}

nlohmann::json HttpLlmClient::request_body(const LlmRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    nlohmann::json content = nlohmann::json::array();
    for (const auto& p : m.parts) {
      if (p.is_image) {
        content.push_back(
            {{"type", "image_url"},
             {"image_url",
              {{"url", "data:" + p.image.media_type + ";base64," + base64_encode(p.image.bytes)}}}});
      } else {
        content.push_back({{"type", "text"}, {"text", p.text}});
      }
    }
    messages.push_back({{"role", m.role}, {"content", content}});
  }
  return {{"model", request.model},
          {"messages", messages},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens}};
}

LlmResponse HttpLlmClient::parse_response(const std::string& body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() ||
      j["choices"].empty()) {
    throw ApiError(200, "response without choices: " + body.substr(0, 500));
  }
  const auto& choice = j["choices"][0];
  LlmResponse r;
  if (choice.contains("message") && choice["message"].contains("content") &&
      choice["message"]["content"].is_string()) {
    r.text = choice["message"]["content"].get<std::string>();
  }
  if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
    r.finish_reason = choice["finish_reason"].get<std::string>();
  }
  if (j.contains("usage") && j["usage"].is_object()) {
    const auto& u = j["usage"];
    r.usage.prompt_tokens = u.value("prompt_tokens", std::int64_t{0});
    r.usage.completion_tokens = u.value("completion_tokens", std::int64_t{0});
    r.usage.total_tokens = u.value("total_tokens", std::int64_t{0});
  }
  return r;
}

LlmResponse HttpLlmClient::chat(const LlmRequest& request) {
  request.validate();
  const std::string body = request_body(request).dump();
  httplib::Client cli(scheme_host_port_);
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::string last_failure;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double wait = std::min(config_.max_backoff_seconds,
                                   config_.initial_backoff_seconds * std::pow(2.0, attempt - 1));
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }
    auto res = cli.Post(path_, headers, body, "application/json");
    if (!res) {
      last_failure = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_failure = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw ApiError(res->status, res->body.substr(0, 500));
    }
    return parse_response(res->body);
  }
  throw TransportError("request failed after " + std::to_string(config_.max_retries + 1) +
                       " attempt(s); last failure: " + last_failure);
}

}  // namespace elemental
