#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elemental/feature_dsl.hpp"
#include "elemental/feedback.hpp"
#include "elemental/spec.hpp"

namespace elemental {

struct ImageData {
  std::vector<std::uint8_t> bytes;
  std::string media_type = "image/png";
};

struct ContentPart {
  bool is_image = false;
  std::string text;
  ImageData image;

  static ContentPart of_text(std::string text);
  static ContentPart of_image(ImageData image);
};

struct ChatMessage {
  std::string role;  // system, user or assistant
  std::vector<ContentPart> parts;

  static ChatMessage text(std::string role, std::string text);
  // Concatenated text parts.
  std::string joined_text() const;
  std::size_t image_count() const;
  // Throws ConfigurationError on an unknown role, no parts, or an image
  // outside a user message.
  void validate() const;
};

struct LlmRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 1.0;
  int max_tokens = 4096;

  void validate() const;
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t total_tokens = 0;
};

struct LlmResponse {
  std::string text;
  std::string finish_reason;
  Usage usage;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual LlmResponse chat(const LlmRequest& request) = 0;
};

struct HttpClientConfig {
  // Full chat-completions URL.
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_seconds = 120.0;
  int max_retries = 5;          // transient failures (429, 5xx, network)
  double initial_backoff_seconds = 1.0;
  double max_backoff_seconds = 30.0;
};

// OpenAI-compatible client. Images travel as base64 data URLs.
class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(HttpClientConfig config);
  LlmResponse chat(const LlmRequest& request) override;

  static nlohmann::json request_body(const LlmRequest& request);
  // Throws ApiError when the body has no usable choice.
  static LlmResponse parse_response(const std::string& body);

 private:
  HttpClientConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::string api_key_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);

struct MockTurn {
  std::string response;
  std::vector<std::string> expect;  // substrings the request text must contain
};

// Canned responses consumed strictly in order. JSONL, one turn per line:
// {"response": "...", "expect": ["..."]}.
struct MockScript {
  std::vector<MockTurn> turns;

  static MockScript parse(const std::string& jsonl);
  static MockScript load(const std::filesystem::path& path);
  // Responses of a recorded transcript, in order, without assertions.
  static MockScript from_transcript(const std::filesystem::path& path);
};

class MockLlmClient : public LlmClient {
 public:
  explicit MockLlmClient(MockScript script);
  // Throws MockError on exhaustion or a failed expectation.
  LlmResponse chat(const LlmRequest& request) override;
  std::size_t calls() const { return next_; }
  std::size_t remaining() const { return script_.turns.size() - next_; }

 private:
  MockScript script_;
  std::size_t next_ = 0;
};

// Forwards to another client and appends every request/response pair to a
// JSONL transcript. Image bytes are recorded as media type, size and SHA-256.
class TranscriptRecorder : public LlmClient {
 public:
  TranscriptRecorder(LlmClient& inner, std::filesystem::path path);
  LlmResponse chat(const LlmRequest& request) override;
  std::size_t turns() const { return turn_; }

 private:
  LlmClient& inner_;
  std::filesystem::path path_;
  std::size_t turn_ = 0;
  std::mutex mutex_;
};

nlohmann::json message_to_json(const ChatMessage& message);
std::string sha256_hex(std::span<const std::uint8_t> bytes);

// ---- prompts ----

// Raw template text by name (system, initial_user, code_output, ...).
const std::string& prompt_template(const std::string& name);
// Replaces {key} occurrences in one pass. Throws ConfigurationError on a
// placeholder without a value.
std::string fill_template(const std::string& text, const std::map<std::string, std::string>& values);

// kNone sends the task description alone.
enum class DemoPresentation { kKeyframes, kSuperimposed, kText, kNone };

struct PromptOptions {
  DemoPresentation demo = DemoPresentation::kKeyframes;
  std::string text_demo;  // kText: pre-formatted observation listing
};

// [system, user]. Image presentations need at least one image.
std::vector<ChatMessage> build_initial_prompt(const EnvSpec& spec, const std::string& task_description,
                                              const std::vector<ImageData>& demo_images,
                                              const PromptOptions& options = {});

// Code-output instructions for an observation of `obs_dim` entries.
std::string code_output_instruction(std::size_t obs_dim);

// A single user message with the feedback and the analysis tips. The
// orchestrator appends it to the conversation that produced the program.
std::vector<ChatMessage> build_reflection_prompt(const FeedbackReport& report);

// {'a': 0.700, 'b': -0.107}
std::string format_weights(const std::vector<std::string>& names, std::span<const double> theta);

struct GenerationOptions {
  std::string model = "gpt-4o";
  double temperature = 1.0;
  int max_tokens = 4096;
  int max_retries = 3;
};

// chat -> extract -> parse -> validate, re-prompting with the traceback on
// failure. Throws GenerationFailed after 1 + max_retries failed attempts.
FeatureProgram request_feature_program(LlmClient& client, const std::vector<ChatMessage>& prompt,
                                       const EnvSpec& spec, std::span<const Observation> samples,
                                       const GenerationOptions& options = {});

}  // namespace elemental
