#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "cfbench/error.hpp"
#include "cfbench/text.hpp"

namespace cfbench {

enum class Role { system, user, assistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

struct ChatMessage {
  Role role;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

// System message first, then user/assistant turns alternating from user.
struct ChatTranscript {
  std::vector<ChatMessage> messages;

  // Empty when the invariants hold, otherwise the first violation.
  std::optional<std::string> violation() const {
    if (messages.empty()) return "transcript is empty";
    if (messages.front().role != Role::system) return "first message must have role system";
    for (std::size_t i = 0; i < messages.size(); ++i) {
      const auto& m = messages[i];
      if (m.role != Role::assistant && m.content.empty()) {
        return "message " + std::to_string(i) + " (" + std::string(to_string(m.role)) + ") is empty";
      }
      if (i == 0) continue;
      const Role expected = (i % 2 == 1) ? Role::user : Role::assistant;
      if (m.role != expected) {
        return "message " + std::to_string(i) + " should have role " + std::string(to_string(expected));
      }
    }
    return std::nullopt;
  }

  std::size_t content_chars() const {
    std::size_t n = 0;
    for (const auto& m : messages) n += m.content.size();
    return n;
  }
};

struct ModelSpec {
  std::string name;
  std::string api_model;  // sent as "model"; defaults to name
  double parameter_count = 0;
  std::string endpoint;  // full chat-completions URL
  std::string api_key_env;
  std::map<std::string, std::string> headers;
  double temperature = 0.0;
  std::optional<std::int64_t> seed = 0;
  int max_output_tokens = 1024;
  std::chrono::milliseconds request_timeout{120'000};
  int max_in_flight = 4;

  void validate() const {
    if (name.empty()) throw usage_error("model name must not be empty");
    if (temperature < 0) throw usage_error("model " + name + ": temperature must be >= 0");
    if (max_output_tokens < 1) throw usage_error("model " + name + ": max_output_tokens must be >= 1");
    if (request_timeout.count() <= 0) throw usage_error("model " + name + ": request_timeout must be positive");
    if (max_in_flight < 1) throw usage_error("model " + name + ": max_in_flight must be >= 1");
  }
};

enum class GatewayErrorKind { timeout, transport, backend, script_exhausted, precondition };

inline std::string_view to_string(GatewayErrorKind k) {
  switch (k) {
    case GatewayErrorKind::timeout: return "timeout";
    case GatewayErrorKind::transport: return "transport";
    case GatewayErrorKind::backend: return "backend";
    case GatewayErrorKind::script_exhausted: return "script_exhausted";
    case GatewayErrorKind::precondition: return "precondition";
  }
  return "backend";
}

inline std::optional<GatewayErrorKind> gateway_error_from_string(std::string_view s) {
  for (auto k : {GatewayErrorKind::timeout, GatewayErrorKind::transport, GatewayErrorKind::backend,
                 GatewayErrorKind::script_exhausted, GatewayErrorKind::precondition}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

class GatewayError : public Error {
 public:
  GatewayError(GatewayErrorKind kind, const std::string& what)
      : Error(kind == GatewayErrorKind::precondition ? ErrorKind::precondition : ErrorKind::environment, what),
        kind_(kind) {}

  GatewayErrorKind gateway_kind() const noexcept { return kind_; }

 private:
  GatewayErrorKind kind_;
};

struct Completion {
  std::string text;
  std::chrono::milliseconds latency{0};
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual Completion complete(const ModelSpec& spec, const ChatTranscript& transcript) = 0;
};

// One scripted reply: literal text or an injected failure.
using ScriptStep = std::variant<std::string, GatewayErrorKind>;

// Replays a fixed script; the k-th call returns step k. Latency is simulated
// so scripted runs stay bit-reproducible.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(std::vector<ScriptStep> script, std::chrono::milliseconds simulated_latency = {})
      : script_(std::move(script)), latency_(simulated_latency) {
    if (script_.empty()) throw precondition_error("scripted backend needs a non-empty script");
  }

  explicit ScriptedBackend(const std::vector<std::string>& replies, std::chrono::milliseconds simulated_latency = {})
      : ScriptedBackend(std::vector<ScriptStep>(replies.begin(), replies.end()), simulated_latency) {}

  Completion complete(const ModelSpec&, const ChatTranscript&) override {
    std::size_t k;
    {
      std::lock_guard lock(mutex_);
      if (cursor_ >= script_.size()) {
        throw GatewayError(GatewayErrorKind::script_exhausted,
                           "script exhausted after " + std::to_string(script_.size()) + " replies");
      }
      k = cursor_++;
    }
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
    if (const auto* kind = std::get_if<GatewayErrorKind>(&script_[k])) {
      throw GatewayError(*kind, "scripted " + std::string(to_string(*kind)) + " failure");
    }
    return {std::get<std::string>(script_[k]), latency_};
  }

  std::size_t calls() const {
    std::lock_guard lock(mutex_);
    return cursor_;
  }

 private:
  std::vector<ScriptStep> script_;
  std::chrono::milliseconds latency_;
  mutable std::mutex mutex_;
  std::size_t cursor_ = 0;
};

// Validates the transcript, calls the backend and strips trailing whitespace.
inline Completion complete(Backend& backend, const ModelSpec& spec, const ChatTranscript& transcript) {
  if (auto why = transcript.violation()) throw GatewayError(GatewayErrorKind::precondition, *why);
  if (transcript.messages.back().role == Role::assistant) {
    throw GatewayError(GatewayErrorKind::precondition, "last message must be user or system");
  }
  Completion c = backend.complete(spec, transcript);
  c.text.resize(text::trim_right(c.text).size());
  return c;
}

}  // namespace cfbench
