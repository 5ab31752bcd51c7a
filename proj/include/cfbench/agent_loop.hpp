#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfbench/compiler.hpp"
#include "cfbench/corpus.hpp"
#include "cfbench/extraction.hpp"
#include "cfbench/model_gateway.hpp"

namespace cfbench {

inline constexpr std::string_view kSystemPrompt =
    "You are a software that writes C programs based on prompts. Provides only the code, with no description";

inline std::string repair_prompt(std::string_view code, std::string_view error) {
  std::string p = "For this program ";
  p += code;
  p += ", I got the following compilation error: ";
  p += error;
  p += ". Please fix the code and return the fixed code in a markdown code block.";
  return p;
}

struct Prompts {
  std::string system_prompt;
  std::string first_user_prompt;
  std::optional<std::string> repair;
};

// The first user turn is the task description verbatim (the title stands in
// when a task ships without one).
inline Prompts render_prompts(const Task& task, std::optional<std::string_view> prev_code = std::nullopt,
                              std::optional<std::string_view> prev_error = std::nullopt) {
  if (prev_code.has_value() != prev_error.has_value()) {
    throw precondition_error("repair prompt needs both the previous code and its error");
  }
  Prompts p{std::string(kSystemPrompt), task.description.empty() ? task.name : task.description, std::nullopt};
  if (prev_code) p.repair = repair_prompt(*prev_code, *prev_error);
  return p;
}

enum class RunMode { baseline, agent };

inline std::string_view to_string(RunMode m) { return m == RunMode::baseline ? "baseline" : "agent"; }

inline std::optional<RunMode> run_mode_from_string(std::string_view s) {
  if (s == "baseline") return RunMode::baseline;
  if (s == "agent") return RunMode::agent;
  return std::nullopt;
}

struct IterationRecord {
  int index = 1;
  std::string prompt_sent;
  std::string raw_output;
  ExtractionResult extraction;
  CompileOutcome compile;
  std::chrono::milliseconds model_latency{0};
  // Set when the iteration failed before or instead of compiling
  // (a gateway error kind, or "source_too_large").
  std::optional<std::string> error;
};

struct TaskRunLog {
  std::string task_id;
  std::string model_name;
  RunMode mode = RunMode::baseline;
  std::vector<IterationRecord> iterations;
  bool succeeded = false;
  std::optional<int> success_iteration;
  // Why the run stopped early, if it did.
  std::optional<std::string> error;

  const IterationRecord& final_iteration() const { return iterations.back(); }
};

class LogSink {
 public:
  virtual ~LogSink() = default;
  virtual void write(const TaskRunLog& log) = 0;
};

struct LoopOptions {
  int max_iterations = 5;
  // Drop the oldest user/assistant pair while the transcript exceeds this many
  // characters; 0 disables the cap.
  std::size_t context_cap_chars = 0;
};

namespace detail {

inline void apply_context_cap(ChatTranscript& t, std::size_t cap) {
  if (cap == 0) return;
  while (t.content_chars() > cap && t.messages.size() > 3) {
    t.messages.erase(t.messages.begin() + 1, t.messages.begin() + 3);
  }
}

inline TaskRunLog run_protocol(const Task& task, const ModelSpec& spec, Backend& backend, const CompilerConfig& cc,
                               RunMode mode, const LoopOptions& opts) {
  if (opts.max_iterations < 1) throw precondition_error("max_iterations must be >= 1");
  const Prompts prompts = render_prompts(task);
  TaskRunLog log;
  log.task_id = task.id;
  log.model_name = spec.name;
  log.mode = mode;

  ChatTranscript transcript;
  transcript.messages.push_back({Role::system, prompts.system_prompt});
  transcript.messages.push_back({Role::user, prompts.first_user_prompt});

  for (int k = 1; k <= opts.max_iterations; ++k) {
    IterationRecord it;
    it.index = k;
    it.prompt_sent = transcript.messages.back().content;
    try {
      Completion c = complete(backend, spec, transcript);
      it.raw_output = std::move(c.text);
      it.model_latency = c.latency;
    } catch (const GatewayError& e) {
      it.error = std::string(to_string(e.gateway_kind()));
      it.extraction = extract_code("");
      log.error = it.error;
      log.iterations.push_back(std::move(it));
      break;
    }
    it.extraction = extract_code(it.raw_output);
    try {
      it.compile = compile(it.extraction.code, cc);
    } catch (const SourceTooLargeError&) {
      it.error = "source_too_large";
      log.error = it.error;
      log.iterations.push_back(std::move(it));
      break;
    }
    const bool ok = it.compile.success;
    std::string code = it.extraction.code;
    std::string feedback = truncate_error(it.compile.stderr_raw, cc.error_cap_bytes);
    transcript.messages.push_back({Role::assistant, it.raw_output});
    log.iterations.push_back(std::move(it));
    if (ok) {
      log.succeeded = true;
      log.success_iteration = k;
      break;
    }
    if (k == opts.max_iterations) break;
    transcript.messages.push_back({Role::user, repair_prompt(code, feedback)});
    apply_context_cap(transcript, opts.context_cap_chars);
  }
  return log;
}

}  // namespace detail

// One attempt, no compiler feedback.
inline TaskRunLog run_baseline(const Task& task, const ModelSpec& spec, Backend& backend, const CompilerConfig& cc,
                               LogSink* sink = nullptr) {
  auto log = detail::run_protocol(task, spec, backend, cc, RunMode::baseline, LoopOptions{1, 0});
  if (sink) sink->write(log);
  return log;
}

// Generate, compile, feed stderr back; stops at the first success or after
// max_iterations attempts. Each call starts a fresh transcript.
inline TaskRunLog run_agent(const Task& task, const ModelSpec& spec, Backend& backend, const CompilerConfig& cc,
                            const LoopOptions& opts = {}, LogSink* sink = nullptr) {
  auto log = detail::run_protocol(task, spec, backend, cc, RunMode::agent, opts);
  if (sink) sink->write(log);
  return log;
}

// Run-log JSON Lines schema ---------------------------------------------------

inline nlohmann::ordered_json to_json(const IterationRecord& it) {
  nlohmann::ordered_json j;
  j["index"] = it.index;
  j["prompt_sent"] = it.prompt_sent;
  j["raw_output"] = it.raw_output;
  j["code"] = it.extraction.code;
  j["had_fences"] = it.extraction.had_fences;
  j["fence_info"] = it.extraction.fence_info ? nlohmann::ordered_json(*it.extraction.fence_info) : nlohmann::ordered_json(nullptr);
  j["compile"] = {{"success", it.compile.success},
                  {"exit_code", it.compile.exit_code},
                  {"stderr_raw", it.compile.stderr_raw},
                  {"timed_out", it.compile.timed_out}};
  j["model_latency_ms"] = it.model_latency.count();
  j["error"] = it.error ? nlohmann::ordered_json(*it.error) : nlohmann::ordered_json(nullptr);
  return j;
}

inline nlohmann::ordered_json to_json(const TaskRunLog& log) {
  nlohmann::ordered_json j;
  j["task_id"] = log.task_id;
  j["model_name"] = log.model_name;
  j["mode"] = std::string(to_string(log.mode));
  j["succeeded"] = log.succeeded;
  j["success_iteration"] = log.success_iteration ? nlohmann::ordered_json(*log.success_iteration) : nlohmann::ordered_json(nullptr);
  auto iterations = nlohmann::ordered_json::array();
  for (const auto& it : log.iterations) iterations.push_back(to_json(it));
  j["iterations"] = std::move(iterations);
  j["error"] = log.error ? nlohmann::ordered_json(*log.error) : nlohmann::ordered_json(nullptr);
  return j;
}

inline std::string serialize_log(const TaskRunLog& log) {
  return to_json(log).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

namespace detail {

template <typename T>
T required(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw data_error(std::string("run log is missing field ") + key);
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw data_error(std::string("run log field ") + key + " has the wrong type");
  }
}

inline std::optional<std::string> optional_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw data_error(std::string("run log field ") + key + " must be a string or null");
  return it->get<std::string>();
}

}  // namespace detail

// Extraction details and diagnostics are recomputed from the stored raw text.
inline TaskRunLog parse_log(std::string_view line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw data_error("run log line is not a JSON object");
  TaskRunLog log;
  log.task_id = detail::required<std::string>(j, "task_id");
  log.model_name = detail::required<std::string>(j, "model_name");
  const auto mode = run_mode_from_string(detail::required<std::string>(j, "mode"));
  if (!mode) throw data_error("run log has an unknown mode");
  log.mode = *mode;
  log.succeeded = detail::required<bool>(j, "succeeded");
  if (auto it = j.find("success_iteration"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw data_error("run log field success_iteration must be an integer");
    log.success_iteration = it->get<int>();
  }
  log.error = detail::optional_string(j, "error");
  const auto iterations = j.find("iterations");
  if (iterations == j.end() || !iterations->is_array()) throw data_error("run log has no iterations array");
  for (const auto& ij : *iterations) {
    IterationRecord it;
    it.index = detail::required<int>(ij, "index");
    it.prompt_sent = detail::required<std::string>(ij, "prompt_sent");
    it.raw_output = detail::required<std::string>(ij, "raw_output");
    it.extraction = extract_code(it.raw_output);
    if (it.extraction.code != detail::required<std::string>(ij, "code")) {
      throw data_error("run log " + log.task_id + ": stored code does not match its raw output");
    }
    if (!ij.is_object()) throw data_error("run log iteration is not an object");
    const auto cit = ij.find("compile");
    if (cit == ij.end() || !cit->is_object()) throw data_error("run log iteration has no compile object");
    const auto& cj = *cit;
    it.compile.success = detail::required<bool>(cj, "success");
    it.compile.exit_code = detail::required<int>(cj, "exit_code");
    it.compile.stderr_raw = detail::required<std::string>(cj, "stderr_raw");
    it.compile.timed_out = detail::required<bool>(cj, "timed_out");
    it.compile.diagnostics = parse_diagnostics(it.compile.stderr_raw);
    it.model_latency = std::chrono::milliseconds(detail::required<long long>(ij, "model_latency_ms"));
    it.error = detail::optional_string(ij, "error");
    log.iterations.push_back(std::move(it));
  }
  if (log.iterations.empty()) throw data_error("run log " + log.task_id + " has no iterations");
  return log;
}

inline std::string safe_file_stem(std::string_view model) {
  std::string safe;
  for (char c : model) safe += (text::is_word_char(c) || c == '-' || c == '.') ? c : '_';
  return safe;
}

inline std::string log_file_name(std::string_view model, RunMode mode) {
  return safe_file_stem(model) + "__" + std::string(to_string(mode)) + ".jsonl";
}

}  // namespace cfbench
