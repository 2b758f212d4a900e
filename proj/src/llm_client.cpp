#include "ultrag/llm_client.hpp"

#include <cstdlib>
#include <sstream>

#include <httplib.h>

#include "ultrag/executor_wire.hpp"

namespace ultrag {

HttpLlmClient::HttpLlmClient(std::string base_url, std::string model, std::string api_key_env,
                             std::chrono::seconds timeout)
    : base_url_(std::move(base_url)), model_(std::move(model)), api_key_env_(std::move(api_key_env)),
      timeout_(timeout) {}

nlohmann::json HttpLlmClient::request_body(const std::string& model, const std::vector<ChatMessage>& messages) {
  auto msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back(to_json(m));
  return {{"model", model}, {"messages", std::move(msgs)}, {"temperature", 0}};
}

ChatCompletion HttpLlmClient::parse_response(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("choices") || !body["choices"].is_array() || body["choices"].empty())
    throw TransportError("LLM response has no choices");
  const auto& msg = body["choices"][0].value("message", nlohmann::json::object());
  ChatCompletion out;
  out.content = msg.value("content", std::string());
  if (body.contains("usage") && body["usage"].is_object()) {
    out.prompt_tokens = body["usage"].value("prompt_tokens", std::size_t{0});
    out.completion_tokens = body["usage"].value("completion_tokens", std::size_t{0});
  }
  return out;
}

ChatCompletion HttpLlmClient::complete(const std::vector<ChatMessage>& messages) {
  auto [host, prefix] = split_url(base_url_);
  httplib::Client cli(host);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  httplib::Headers headers;
  if (const char* key = std::getenv(api_key_env_.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);
  auto res = cli.Post(prefix + "/chat/completions", headers, request_body(model_, messages).dump(),
                      "application/json");
  if (!res) throw TransportError("LLM endpoint unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw TransportError("LLM endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
  auto body = nlohmann::json::parse(res->body, nullptr, false);
  if (body.is_discarded()) throw TransportError("LLM endpoint returned invalid JSON");
  return parse_response(body);
}

std::size_t approx_tokens(const std::string& text) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

ScriptedLlmClient::ScriptedLlmClient(std::vector<std::string> script) {
  for (auto& s : script) script_.push_back({false, std::move(s)});
}

ScriptedLlmClient::ScriptedLlmClient(Responder responder) : responder_(std::move(responder)) {}

void ScriptedLlmClient::push_failure(std::string what) {
  std::lock_guard lock(mu_);
  script_.push_back({true, std::move(what)});
}

void ScriptedLlmClient::push_reply(std::string reply) {
  std::lock_guard lock(mu_);
  script_.push_back({false, std::move(reply)});
}

ChatCompletion ScriptedLlmClient::complete(const std::vector<ChatMessage>& messages) {
  std::string reply;
  bool scripted = false;
  {
    std::lock_guard lock(mu_);
    seen_.push_back(messages);
    if (!script_.empty()) {
      auto step = std::move(script_.front());
      script_.pop_front();
      if (step.fail) throw TransportError(step.text);
      reply = std::move(step.text);
      scripted = true;
    } else if (!responder_) {
      throw TransportError("scripted LLM has no reply left");
    }
  }
  if (!scripted) reply = responder_(messages);
  ChatCompletion out;
  for (const auto& m : messages) out.prompt_tokens += approx_tokens(m.content);
  out.completion_tokens = approx_tokens(reply);
  out.content = std::move(reply);
  return out;
}

std::size_t ScriptedLlmClient::calls() const {
  std::lock_guard lock(mu_);
  return seen_.size();
}

std::vector<std::vector<ChatMessage>> ScriptedLlmClient::prompts() const {
  std::lock_guard lock(mu_);
  return seen_;
}

nlohmann::json to_json(const ChatMessage& m) { return {{"role", m.role}, {"content", m.content}}; }

ChatMessage chat_message_from_json(const nlohmann::json& j) {
  return {j.value("role", std::string()), j.value("content", std::string())};
}

}  // namespace ultrag
