#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace ultrag {

struct ChatMessage {
  std::string role;
  std::string content;
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatCompletion {
  std::string content;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

/// Chat-completions style model endpoint. Implementations must be safe to
/// call from several threads. Transport failures throw TransportError.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual ChatCompletion complete(const std::vector<ChatMessage>& messages) = 0;
};

/// POST {base_url}/chat/completions with {"model", "messages", "temperature": 0}.
/// A bearer token is read from the named environment variable when set.
class HttpLlmClient final : public LlmClient {
 public:
  HttpLlmClient(std::string base_url, std::string model, std::string api_key_env = "ULTRAG_API_KEY",
                std::chrono::seconds timeout = std::chrono::seconds(300));
  ChatCompletion complete(const std::vector<ChatMessage>& messages) override;

  static nlohmann::json request_body(const std::string& model, const std::vector<ChatMessage>& messages);
  /// Extracts choices[0].message.content and usage counters.
  static ChatCompletion parse_response(const nlohmann::json& body);

 private:
  std::string base_url_;
  std::string model_;
  std::string api_key_env_;
  std::chrono::seconds timeout_;
};

/// Rough whitespace token count, used when a mock has no usage numbers.
std::size_t approx_tokens(const std::string& text);

/// Test double. Replies come from a responder callback or, failing that, a
/// FIFO script. Every call is recorded.
class ScriptedLlmClient final : public LlmClient {
 public:
  using Responder = std::function<std::string(const std::vector<ChatMessage>&)>;

  ScriptedLlmClient() = default;
  explicit ScriptedLlmClient(std::vector<std::string> script);
  explicit ScriptedLlmClient(Responder responder);

  ChatCompletion complete(const std::vector<ChatMessage>& messages) override;

  /// Queue a failure: the next call throws TransportError.
  void push_failure(std::string what);
  void push_reply(std::string reply);

  std::size_t calls() const;
  std::vector<std::vector<ChatMessage>> prompts() const;

 private:
  struct Step {
    bool fail = false;
    std::string text;
  };
  mutable std::mutex mu_;
  std::deque<Step> script_;
  Responder responder_;
  std::vector<std::vector<ChatMessage>> seen_;
};

nlohmann::json to_json(const ChatMessage& m);
ChatMessage chat_message_from_json(const nlohmann::json& j);

}  // namespace ultrag
