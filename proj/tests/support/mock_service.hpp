#pragma once
// In-process HTTP doubles for the executor service and a chat-completions endpoint.

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ultrag/executor_wire.hpp"

namespace mock {

class Server {
 public:
  Server() = default;
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  httplib::Server& http() { return srv_; }

  void start() {
    port_ = srv_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }
  void stop() {
    if (thread_.joinable()) {
      srv_.stop();
      thread_.join();
    }
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server srv_;
  std::thread thread_;
  int port_ = 0;
};

/// Executor service running the reference backend. `override_status` forces
/// a status for every /execute call; `raw_body` replaces the response body.
class Executor {
 public:
  std::atomic<int> override_status{0};
  std::string raw_body;
  std::atomic<int> calls{0};

  explicit Executor(std::string prefix = "") : prefix_(std::move(prefix)) {
    server_.http().Post(prefix_ + "/execute", [this](const httplib::Request& req, httplib::Response& res) {
      ++calls;
      if (override_status != 0) {
        res.status = override_status;
        res.set_content(raw_body.empty() ? R"({"error":"forced"})" : raw_body, "application/json");
        return;
      }
      if (!raw_body.empty()) {
        res.set_content(raw_body, "application/json");
        return;
      }
      auto body = nlohmann::json::parse(req.body, nullptr, false);
      try {
        auto r = ultrag::execute_request_from_json(body);
        res.set_content(ultrag::to_json(ultrag::reference_execute(r)).dump(), "application/json");
      } catch (const ultrag::WireError& e) {
        res.status = e.status();
        res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
      }
    });
    server_.http().Get(prefix_ + "/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok","model":"reference"})", "application/json");
    });
    server_.start();
  }

  std::string url() const { return server_.url() + prefix_; }

 private:
  std::string prefix_;
  Server server_;
};

/// Chat-completions endpoint answering with a callback.
class Chat {
 public:
  using Handler = std::function<std::string(const nlohmann::json&)>;

  explicit Chat(Handler handler) : handler_(std::move(handler)) {
    server_.http().Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = nlohmann::json::parse(req.body);
      {
        std::lock_guard lock(mu_);
        bodies_.push_back(body);
        auth_.push_back(req.get_header_value("Authorization"));
      }
      if (fail_next_ > 0) {
        --fail_next_;
        res.status = 500;
        res.set_content("upstream exploded", "text/plain");
        return;
      }
      const auto reply = handler_(body);
      nlohmann::json out{{"choices", {{{"message", {{"role", "assistant"}, {"content", reply}}}}}},
                         {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 7}}}};
      res.set_content(out.dump(), "application/json");
    });
    server_.start();
  }

  std::string url() const { return server_.url() + "/v1"; }
  void fail_next(int n) { fail_next_ = n; }
  std::vector<nlohmann::json> bodies() const {
    std::lock_guard lock(mu_);
    return bodies_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  Handler handler_;
  std::atomic<int> fail_next_{0};
  mutable std::mutex mu_;
  std::vector<nlohmann::json> bodies_;
  std::vector<std::string> auth_;
  Server server_;
};

}  // namespace mock
