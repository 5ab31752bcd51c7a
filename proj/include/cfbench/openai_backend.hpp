#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#ifdef CFBENCH_WITH_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cfbench/model_gateway.hpp"

namespace cfbench {

// Append-only JSON Lines log of every live request/response pair, flushed
// before the response is handed back.
class AuditLog {
 public:
  explicit AuditLog(const std::filesystem::path& path) : out_(path, std::ios::app | std::ios::binary) {
    if (!out_) throw environment_error("cannot open audit log " + path.string());
  }

  void append(const nlohmann::json& record) {
    std::lock_guard lock(mutex_);
    out_ << record.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    out_.flush();
  }

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

class InFlightLimiter {
 public:
  explicit InFlightLimiter(int cap) : free_(cap) {}

  void acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(mutex_);
      ++free_;
    }
    cv_.notify_one();
  }

  // Shared per endpoint; the first registration fixes the cap.
  static std::shared_ptr<InFlightLimiter> for_endpoint(const std::string& endpoint, int cap) {
    static std::mutex registry_mutex;
    static std::map<std::string, std::weak_ptr<InFlightLimiter>> registry;
    std::lock_guard lock(registry_mutex);
    if (auto existing = registry[endpoint].lock()) return existing;
    auto fresh = std::make_shared<InFlightLimiter>(cap);
    registry[endpoint] = fresh;
    return fresh;
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int free_;
};

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw usage_error("endpoint is not a URL: " + url);
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw usage_error("unsupported endpoint scheme: " + url);
#ifndef CFBENCH_WITH_OPENSSL
  if (scheme == "https") throw usage_error("https endpoints need a build with OpenSSL: " + url);
#endif
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl p;
  p.scheme_host_port = url.substr(0, path_start);
  p.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (p.scheme_host_port.size() <= scheme_end + 3) throw usage_error("endpoint has no host: " + url);
  return p;
}

inline nlohmann::json chat_request_body(const ModelSpec& spec, const ChatTranscript& transcript) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : transcript.messages) {
    messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
  }
  nlohmann::json body = {
      {"model", spec.api_model.empty() ? spec.name : spec.api_model},
      {"messages", std::move(messages)},
      {"temperature", spec.temperature},
      {"max_tokens", spec.max_output_tokens},
      {"stream", false},
  };
  if (spec.seed) body["seed"] = *spec.seed;
  return body;
}

// Reads choices[0].message.content; a null or missing content is an empty reply.
inline std::string parse_chat_response(const std::string& body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw GatewayError(GatewayErrorKind::backend, "response is not a JSON object");
  }
  if (j.contains("error") && !j["error"].is_null()) {
    throw GatewayError(GatewayErrorKind::backend, "backend error: " + j["error"].dump());
  }
  const auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) {
    throw GatewayError(GatewayErrorKind::backend, "response has no choices");
  }
  const auto& choice = (*choices)[0];
  if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object()) {
    throw GatewayError(GatewayErrorKind::backend, "choices[0] has no message");
  }
  const auto& content = choice["message"]["content"];
  if (content.is_string()) return content.get<std::string>();
  if (content.is_null()) return {};
  throw GatewayError(GatewayErrorKind::backend, "choices[0].message.content is not a string");
}

// OpenAI-compatible chat completions over HTTP(S). Retries once on a pure
// transport failure; model-level errors are never retried.
class OpenAIBackend final : public Backend {
 public:
  OpenAIBackend(const ModelSpec& spec, std::shared_ptr<AuditLog> audit)
      : url_(parse_endpoint(spec.endpoint)),
        limiter_(InFlightLimiter::for_endpoint(spec.endpoint, spec.max_in_flight)),
        audit_(std::move(audit)) {}

  Completion complete(const ModelSpec& spec, const ChatTranscript& transcript) override {
    const std::string body = chat_request_body(spec, transcript).dump();
    httplib::Headers headers;
    if (!spec.api_key_env.empty()) {
      if (const char* key = std::getenv(spec.api_key_env.c_str())) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
      }
    }
    for (const auto& [k, v] : spec.headers) headers.emplace(k, v);

    for (int attempt = 0;; ++attempt) {
      try {
        return attempt_once(spec, headers, body);
      } catch (const GatewayError& e) {
        if (e.gateway_kind() != GatewayErrorKind::transport || attempt >= 1) throw;
      }
    }
  }

 private:
  Completion attempt_once(const ModelSpec& spec, const httplib::Headers& headers, const std::string& body) {
    using clock = std::chrono::steady_clock;
    limiter_->acquire();
    struct Release {
      InFlightLimiter& l;
      ~Release() { l.release(); }
    } release{*limiter_};

    httplib::Client client(url_.scheme_host_port);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(spec.request_timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(spec.request_timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    const auto started = clock::now();
    auto res = client.Post(url_.path, headers, body, "application/json");
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - started);

    nlohmann::json record = {{"model", spec.name},
                             {"endpoint", spec.endpoint},
                             {"request", nlohmann::json::parse(body)},
                             {"latency_ms", latency.count()}};
    auto fail = [&](GatewayErrorKind kind, const std::string& what) {
      record["error"] = {{"kind", std::string(to_string(kind))}, {"detail", what}};
      if (audit_) audit_->append(record);
      return GatewayError(kind, spec.name + ": " + what);
    };

    if (!res) {
      const auto err = res.error();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             (err == httplib::Error::Read && latency + std::chrono::milliseconds(50) >= spec.request_timeout);
      throw fail(timed_out ? GatewayErrorKind::timeout : GatewayErrorKind::transport, httplib::to_string(err));
    }
    record["status"] = res->status;
    record["response"] = res->body;
    if (res->status != 200) {
      throw fail(GatewayErrorKind::backend,
                 "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500));
    }
    try {
      std::string text = parse_chat_response(res->body);
      if (audit_) audit_->append(record);
      return {std::move(text), latency};
    } catch (const GatewayError& e) {
      throw fail(e.gateway_kind(), e.what());
    }
  }

  ParsedUrl url_;
  std::shared_ptr<InFlightLimiter> limiter_;
  std::shared_ptr<AuditLog> audit_;
};

}  // namespace cfbench
