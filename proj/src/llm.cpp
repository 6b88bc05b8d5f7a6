#include "elemental/llm.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <sstream>

#include "elemental/error.hpp"

namespace elemental {

ContentPart ContentPart::of_text(std::string text) {
  ContentPart p;
  p.text = std::move(text);
  return p;
}

ContentPart ContentPart::of_image(ImageData image) {
  ContentPart p;
  p.is_image = true;
  p.image = std::move(image);
  return p;
}

ChatMessage ChatMessage::text(std::string role, std::string text) {
  return ChatMessage{std::move(role), {ContentPart::of_text(std::move(text))}};
}

std::string ChatMessage::joined_text() const {
  std::string out;
  for (const auto& p : parts) {
    if (!p.is_image) out += p.text;
  }
  return out;
}

std::size_t ChatMessage::image_count() const {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.is_image ? 1 : 0;
  return n;
}

void ChatMessage::validate() const {
  if (role != "system" && role != "user" && role != "assistant") {
    throw ConfigurationError("unknown chat role '" + role + "'");
  }
  if (parts.empty()) throw ConfigurationError(role + " message has no parts");
  if (role != "user" && image_count() > 0) {
    throw ConfigurationError("images are only allowed in user messages");
  }
}

void LlmRequest::validate() const {
  if (messages.empty()) throw ConfigurationError("request has no messages");
  for (const auto& m : messages) m.validate();
  if (max_tokens <= 0) throw ConfigurationError("max_tokens must be positive");
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

nlohmann::json message_to_json(const ChatMessage& message) {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : message.parts) {
    if (p.is_image) {
      parts.push_back({{"type", "image"},
                       {"media_type", p.image.media_type},
                       {"bytes", p.image.bytes.size()},
                       {"sha256", sha256_hex(p.image.bytes)}});
    } else {
      parts.push_back({{"type", "text"}, {"text", p.text}});
    }
  }
  return {{"role", message.role}, {"parts", parts}};
}

// ---- mock ----

MockScript MockScript::parse(const std::string& jsonl) {
  MockScript script;
  std::istringstream in(jsonl);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("mock script: ") + e.what(), line_no, 0);
    }
    if (!j.is_object() || !j.contains("response") || !j["response"].is_string()) {
      throw SchemaError("mock script turn needs a string \"response\"", line_no);
    }
    MockTurn turn;
    turn.response = j["response"].get<std::string>();
    if (j.contains("expect")) {
      if (!j["expect"].is_array()) throw SchemaError("\"expect\" must be a list of strings", line_no);
      for (const auto& e : j["expect"]) {
        if (!e.is_string()) throw SchemaError("\"expect\" must be a list of strings", line_no);
        turn.expect.push_back(e.get<std::string>());
      }
    }
    script.turns.push_back(std::move(turn));
  }
  return script;
}

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigurationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

MockScript MockScript::load(const std::filesystem::path& path) { return parse(read_text(path)); }

MockScript MockScript::from_transcript(const std::filesystem::path& path) {
  MockScript script;
  std::istringstream in(read_text(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.contains("error") && !j.contains("response")) continue;
    if (j.is_discarded() || !j.contains("response") || !j["response"].contains("text")) {
      throw SchemaError("transcript entry without response text", line_no);
    }
    script.turns.push_back({j["response"]["text"].get<std::string>(), {}});
  }
  return script;
}

MockLlmClient::MockLlmClient(MockScript script) : script_(std::move(script)) {}

LlmResponse MockLlmClient::chat(const LlmRequest& request) {
  request.validate();
  if (next_ >= script_.turns.size()) {
    throw MockError("mock script exhausted after " + std::to_string(next_) + " turn(s)");
  }
  const MockTurn& turn = script_.turns[next_];
  std::string all_text;
  for (const auto& m : request.messages) all_text += m.joined_text() + "\n";
  for (const auto& e : turn.expect) {
    if (all_text.find(e) == std::string::npos) {
      throw MockError("mock turn " + std::to_string(next_) + ": expected prompt to contain \"" + e +
                      "\"");
    }
  }
  ++next_;
  LlmResponse r;
  r.text = turn.response;
  r.finish_reason = "stop";
  r.usage.completion_tokens = static_cast<std::int64_t>(turn.response.size());
  r.usage.prompt_tokens = static_cast<std::int64_t>(all_text.size());
  r.usage.total_tokens = r.usage.prompt_tokens + r.usage.completion_tokens;
  return r;
}

// ---- transcript ----

TranscriptRecorder::TranscriptRecorder(LlmClient& inner, std::filesystem::path path)
    : inner_(inner), path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

LlmResponse TranscriptRecorder::chat(const LlmRequest& request) {
  std::lock_guard lock(mutex_);
  nlohmann::json req = {{"model", request.model},
                        {"temperature", request.temperature},
                        {"max_tokens", request.max_tokens}};
  req["messages"] = nlohmann::json::array();
  for (const auto& m : request.messages) req["messages"].push_back(message_to_json(m));

  nlohmann::json entry = {{"turn", turn_}, {"request", req}};
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error("cannot append to transcript " + path_.string());
  try {
    const LlmResponse r = inner_.chat(request);
    entry["response"] = {{"text", r.text},
                         {"finish_reason", r.finish_reason},
                         {"usage",
                          {{"prompt_tokens", r.usage.prompt_tokens},
                           {"completion_tokens", r.usage.completion_tokens},
                           {"total_tokens", r.usage.total_tokens}}}};
    out << entry.dump() << "\n";
    ++turn_;
    return r;
  } catch (const std::exception& e) {
    entry["error"] = e.what();
    out << entry.dump() << "\n";
    ++turn_;
    throw;
  }
}

}  // namespace elemental
