#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfbench/agent_loop.hpp"
#include "cfbench/compiler.hpp"
#include "cfbench/corpus.hpp"
#include "cfbench/metrics.hpp"
#include "cfbench/model_gateway.hpp"
#include "cfbench/openai_backend.hpp"
#include "cfbench/parallel.hpp"
#include "cfbench/taxonomy.hpp"

namespace cfbench {

// Configuration ---------------------------------------------------------------

struct ScriptBook {
  std::vector<ScriptStep> default_script;
  std::map<std::string, std::vector<ScriptStep>> per_task;

  const std::vector<ScriptStep>& for_task(const std::string& id) const {
    if (auto it = per_task.find(id); it != per_task.end()) return it->second;
    return default_script;
  }
};

struct ModelEntry {
  ModelSpec spec;
  std::string backend = "openai";  // "openai" or "scripted"
  ScriptBook script;
  std::chrono::milliseconds script_delay{0};
};

struct RunConfig {
  std::filesystem::path source;  // raw corpus for prepare
  std::filesystem::path corpus;  // canonical tasks.jsonl; defaults to <out>/tasks.jsonl
  std::filesystem::path out_dir = "out";
  std::vector<ModelEntry> models;
  CompilerConfig compiler;
  std::vector<RunMode> modes = {RunMode::baseline, RunMode::agent};
  LoopOptions loop;
  BucketThresholds thresholds;
  std::size_t jobs = default_jobs();
  bool resume = false;

  std::filesystem::path corpus_path() const { return corpus.empty() ? out_dir / "tasks.jsonl" : corpus; }

  void validate_for_run() const {
    if (models.empty()) throw usage_error("no models configured");
    if (modes.empty()) throw usage_error("no modes selected");
    if (loop.max_iterations < 1) throw usage_error("max_iterations must be >= 1");
    std::set<std::string> names;
    for (const auto& m : models) {
      m.spec.validate();
      if (!names.insert(m.spec.name).second) throw usage_error("duplicate model name " + m.spec.name);
      if (m.backend == "scripted") {
        if (m.script.default_script.empty() && m.script.per_task.empty()) {
          throw usage_error("scripted model " + m.spec.name + " has no script");
        }
      } else if (m.backend == "openai") {
        parse_endpoint(m.spec.endpoint);
      } else {
        throw usage_error("model " + m.spec.name + ": unknown backend " + m.backend);
      }
    }
    compiler.validate();
    thresholds.validate();
  }
};

namespace detail {

inline std::vector<ScriptStep> parse_steps(const nlohmann::json& j) {
  if (!j.is_array()) throw usage_error("script must be an array");
  std::vector<ScriptStep> out;
  for (const auto& s : j) {
    if (s.is_string()) {
      out.emplace_back(s.get<std::string>());
    } else if (s.is_object() && s.contains("error")) {
      auto kind = gateway_error_from_string(s["error"].get<std::string>());
      if (!kind) throw usage_error("unknown scripted error kind " + s["error"].dump());
      out.emplace_back(*kind);
    } else {
      throw usage_error("script steps are strings or {\"error\": kind}");
    }
  }
  return out;
}

inline ScriptBook parse_script(const nlohmann::json& j) {
  ScriptBook b;
  if (j.is_array()) {
    b.default_script = parse_steps(j);
    return b;
  }
  if (!j.is_object()) throw usage_error("script must be an array or an object");
  if (j.contains("default")) b.default_script = parse_steps(j["default"]);
  if (j.contains("tasks")) {
    for (const auto& [id, steps] : j["tasks"].items()) b.per_task[id] = parse_steps(steps);
  }
  return b;
}

inline std::filesystem::path resolve_against(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace detail

// JSON configuration; relative paths resolve against the file's directory.
inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  RunConfig c;
  try {
    if (j.contains("source")) c.source = detail::resolve_against(base, j["source"].get<std::string>());
    if (j.contains("corpus")) c.corpus = detail::resolve_against(base, j["corpus"].get<std::string>());
    if (j.contains("out")) c.out_dir = detail::resolve_against(base, j["out"].get<std::string>());
    if (j.contains("max_iterations")) c.loop.max_iterations = j["max_iterations"].get<int>();
    if (j.contains("context_cap_chars")) c.loop.context_cap_chars = j["context_cap_chars"].get<std::size_t>();
    if (j.contains("jobs")) c.jobs = std::max<std::size_t>(1, j["jobs"].get<std::size_t>());
    if (j.contains("modes")) {
      c.modes.clear();
      for (const auto& m : j["modes"]) {
        auto mode = run_mode_from_string(m.get<std::string>());
        if (!mode) throw usage_error("unknown mode " + m.dump());
        c.modes.push_back(*mode);
      }
    }
    if (j.contains("thresholds")) {
      const auto& t = j["thresholds"];
      c.thresholds.slight_min = t.value("slight_min", c.thresholds.slight_min);
      c.thresholds.significant_min = t.value("significant_min", c.thresholds.significant_min);
    }
    if (j.contains("compiler")) {
      const auto& cj = j["compiler"];
      if (cj.contains("path")) c.compiler.compiler_path = cj["path"].get<std::string>();
      if (cj.contains("flags")) c.compiler.flags = cj["flags"].get<std::vector<std::string>>();
      if (cj.contains("timeout_s")) {
        c.compiler.timeout = std::chrono::milliseconds(static_cast<long long>(cj["timeout_s"].get<double>() * 1000));
      }
      if (cj.contains("workdir_root")) {
        c.compiler.workdir_root = detail::resolve_against(base, cj["workdir_root"].get<std::string>());
      }
      if (cj.contains("error_cap_bytes")) c.compiler.error_cap_bytes = cj["error_cap_bytes"].get<std::size_t>();
      if (cj.contains("max_source_bytes")) c.compiler.max_source_bytes = cj["max_source_bytes"].get<std::size_t>();
      if (cj.contains("scrub_env")) c.compiler.scrub_env = cj["scrub_env"].get<std::vector<std::string>>();
    }
    if (j.contains("models")) {
      for (const auto& mj : j["models"]) {
        ModelEntry m;
        m.spec.name = mj.at("name").get<std::string>();
        m.backend = mj.value("backend", std::string("openai"));
        m.spec.api_model = mj.value("api_model", std::string());
        m.spec.parameter_count = mj.value("parameter_count", 0.0);
        m.spec.endpoint = mj.value("endpoint", std::string());
        m.spec.api_key_env = mj.value("api_key_env", std::string());
        if (mj.contains("headers")) m.spec.headers = mj["headers"].get<std::map<std::string, std::string>>();
        m.spec.temperature = mj.value("temperature", 0.0);
        if (mj.contains("seed")) {
          if (mj["seed"].is_null()) {
            m.spec.seed.reset();
          } else {
            m.spec.seed = mj["seed"].get<std::int64_t>();
          }
        }
        m.spec.max_output_tokens = mj.value("max_output_tokens", m.spec.max_output_tokens);
        if (mj.contains("request_timeout_s")) {
          m.spec.request_timeout =
              std::chrono::milliseconds(static_cast<long long>(mj["request_timeout_s"].get<double>() * 1000));
        }
        m.spec.max_in_flight = mj.value("max_in_flight", m.spec.max_in_flight);
        if (mj.contains("script")) m.script = detail::parse_script(mj["script"]);
        if (mj.contains("script_file")) {
          const auto p = detail::resolve_against(base, mj["script_file"].get<std::string>());
          m.script = detail::parse_script(nlohmann::json::parse(text::read_file(p)));
        }
        m.script_delay = std::chrono::milliseconds(mj.value("script_delay_ms", 0));
        if (!m.spec.api_key_env.empty()) c.compiler.scrub_env.push_back(m.spec.api_key_env);
        c.models.push_back(std::move(m));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(std::string("invalid configuration: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(text::read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw usage_error("configuration is not a JSON object: " + path.string());
  return parse_config(j, path.parent_path());
}

// prepare -------------------------------------------------------------------

struct PrepareSummary {
  std::size_t loaded = 0;
  std::size_t kept = 0;
  std::size_t skipped = 0;
  std::size_t rejected = 0;
};

// Loads the raw corpus, keeps the tasks whose ground truth compiles, and writes
// tasks.jsonl plus rejected.jsonl (skips and compile rejections) to out_dir.
inline PrepareSummary cmd_prepare(const RunConfig& cfg) {
  if (cfg.source.empty()) throw usage_error("prepare needs a corpus source");
  resolve_compiler(cfg.compiler);
  auto loaded = load_corpus(cfg.source);
  if (loaded.corpus.tasks.empty()) throw data_error("no tasks found in " + cfg.source.string());
  auto filtered = filter_compilable(loaded.corpus, cfg.compiler, cfg.jobs);
  std::filesystem::create_directories(cfg.out_dir);
  text::write_file(cfg.out_dir / "tasks.jsonl", serialize_corpus(filtered.corpus));
  std::vector<ReportEntry> report = loaded.skipped;
  report.insert(report.end(), filtered.rejected.begin(), filtered.rejected.end());
  text::write_file(cfg.out_dir / "rejected.jsonl", serialize_report(report));
  return {loaded.corpus.size(), filtered.corpus.size(), loaded.skipped.size(), filtered.rejected.size()};
}

// run -----------------------------------------------------------------------

namespace detail {

// Reads the complete lines of a log file, truncating a torn final line left
// by an interrupted writer.
inline std::vector<std::string> recover_log_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return lines;
  std::string content = text::read_file(path);
  const auto last_nl = content.rfind('\n');
  const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (keep != content.size()) std::filesystem::resize_file(path, keep);
  content.resize(keep);
  for (auto l : text::split_lines(content)) {
    if (!text::is_blank(l)) lines.emplace_back(l);
  }
  return lines;
}

// Writes results in submission-slot order; a slot marked as a gap ends the
// file for this run (later results are dropped and redone on resume).
class OrderedLogWriter {
 public:
  OrderedLogWriter(const std::filesystem::path& path, std::size_t slots, bool append)
      : out_(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc)), pending_(slots) {
    if (!out_) throw environment_error("cannot open run log " + path.string());
  }

  void submit(std::size_t slot, std::optional<std::string> line) {
    std::lock_guard lock(mutex_);
    pending_[slot] = Entry{true, std::move(line)};
    while (!closed_ && next_ < pending_.size() && pending_[next_].ready) {
      auto& e = pending_[next_];
      if (!e.line) {
        closed_ = true;
        break;
      }
      out_ << *e.line << '\n';
      out_.flush();
      ++written_;
      e.line.reset();
      ++next_;
    }
  }

  std::size_t written() const {
    std::lock_guard lock(mutex_);
    return written_;
  }

 private:
  struct Entry {
    bool ready = false;
    std::optional<std::string> line;
  };
  mutable std::mutex mutex_;
  std::ofstream out_;
  std::vector<Entry> pending_;
  std::size_t next_ = 0;
  std::size_t written_ = 0;
  bool closed_ = false;
};

}  // namespace detail

struct GroupSummary {
  std::string model;
  RunMode mode = RunMode::baseline;
  std::size_t already_done = 0;
  std::size_t written = 0;
  std::size_t succeeded = 0;
};

struct RunSummary {
  std::vector<GroupSummary> groups;
  std::vector<std::string> aborted_models;
};

inline TaskCorpus load_canonical_corpus(const RunConfig& cfg) {
  auto loaded = load_corpus(cfg.corpus_path());
  if (loaded.corpus.tasks.empty()) throw data_error("no tasks found in " + cfg.corpus_path().string());
  return std::move(loaded.corpus);
}

// Runs every (model, mode) over the corpus. Resumable: with cfg.resume, tasks
// already present in a log are skipped and new results are appended.
inline RunSummary cmd_run(const RunConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate_for_run();
  resolve_compiler(cfg.compiler);
  const TaskCorpus corpus = load_canonical_corpus(cfg);
  std::filesystem::create_directories(cfg.out_dir);

  struct Group {
    const ModelEntry* model;
    RunMode mode;
    std::vector<const Task*> todo;
    std::unique_ptr<detail::OrderedLogWriter> writer;
    std::atomic<std::size_t> succeeded{0};
    std::size_t already_done = 0;
  };
  std::vector<std::unique_ptr<Group>> groups;
  std::map<std::string, std::shared_ptr<Backend>> live_backends;
  std::map<std::string, std::unique_ptr<std::atomic<bool>>> aborted;

  for (const auto& m : cfg.models) {
    aborted[m.spec.name] = std::make_unique<std::atomic<bool>>(false);
    if (m.backend == "openai") {
      auto audit = std::make_shared<AuditLog>(cfg.out_dir / (safe_file_stem(m.spec.name) + ".audit.jsonl"));
      live_backends[m.spec.name] = std::make_shared<OpenAIBackend>(m.spec, std::move(audit));
    }
    for (const auto mode : cfg.modes) {
      auto g = std::make_unique<Group>();
      g->model = &m;
      g->mode = mode;
      const auto path = cfg.out_dir / log_file_name(m.spec.name, mode);
      std::set<std::string> done;
      if (cfg.resume) {
        for (const auto& line : detail::recover_log_lines(path)) {
          try {
            done.insert(parse_log(line).task_id);
          } catch (const nlohmann::json::exception&) {
            throw data_error("unreadable run log line in " + path.string());
          }
        }
      }
      g->already_done = done.size();
      for (const auto& t : corpus.tasks) {
        if (!done.count(t.id)) g->todo.push_back(&t);
      }
      g->writer = std::make_unique<detail::OrderedLogWriter>(path, g->todo.size(), cfg.resume);
      groups.push_back(std::move(g));
    }
  }

  struct Item {
    Group* group;
    std::size_t slot;
  };
  std::vector<Item> items;
  for (auto& g : groups) {
    for (std::size_t i = 0; i < g->todo.size(); ++i) items.push_back({g.get(), i});
  }
  std::mutex progress_mutex;

  parallel_for(items.size(), cfg.jobs, [&](std::size_t n) {
    Group& g = *items[n].group;
    const Task& task = *g.todo[items[n].slot];
    const ModelEntry& m = *g.model;
    auto& model_aborted = *aborted.at(m.spec.name);
    if (model_aborted.load()) {
      g.writer->submit(items[n].slot, std::nullopt);
      return;
    }
    std::shared_ptr<Backend> backend;
    if (m.backend == "scripted") {
      backend = std::make_shared<ScriptedBackend>(m.script.for_task(task.id), m.script_delay);
    } else {
      backend = live_backends.at(m.spec.name);
    }
    TaskRunLog log = g.mode == RunMode::baseline ? run_baseline(task, m.spec, *backend, cfg.compiler)
                                                 : run_agent(task, m.spec, *backend, cfg.compiler, cfg.loop);
    if (log.error && *log.error == to_string(GatewayErrorKind::transport)) {
      model_aborted.store(true);
      g.writer->submit(items[n].slot, std::nullopt);
      if (progress) {
        std::lock_guard lock(progress_mutex);
        *progress << m.spec.name << " " << to_string(g.mode) << " " << task.id << " transport failure, model aborted\n";
      }
      return;
    }
    if (log.succeeded) ++g.succeeded;
    g.writer->submit(items[n].slot, serialize_log(log));
    if (progress) {
      std::lock_guard lock(progress_mutex);
      *progress << m.spec.name << " " << to_string(g.mode) << " " << task.id << " "
                << (log.succeeded ? "ok" : "fail") << " iterations=" << log.iterations.size()
                << (log.error ? " error=" + *log.error : std::string()) << "\n";
    }
  });

  RunSummary s;
  for (const auto& g : groups) {
    s.groups.push_back({g->model->spec.name, g->mode, g->already_done, g->writer->written(), g->succeeded.load()});
  }
  for (const auto& [name, flag] : aborted) {
    if (flag->load()) s.aborted_models.push_back(name);
  }
  return s;
}

// report --------------------------------------------------------------------

struct LogGroupKey {
  std::string model;
  RunMode mode;
  auto operator<=>(const LogGroupKey&) const = default;
};

using LogSet = std::map<LogGroupKey, std::vector<TaskRunLog>>;

// Reads run logs grouped by (model, mode), each group in task-id order. A torn
// final line is ignored; any other malformed line is a data error.
inline LogSet read_logs(const std::vector<std::filesystem::path>& files) {
  LogSet set;
  for (const auto& f : files) {
    const std::string content = text::read_file(f);
    const auto lines = text::split_lines(content);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (text::is_blank(lines[i])) continue;
      const bool torn_tail = i + 1 == lines.size() && !content.empty() && content.back() != '\n';
      try {
        auto log = parse_log(lines[i]);
        set[{log.model_name, log.mode}].push_back(std::move(log));
      } catch (const Error&) {
        if (torn_tail) continue;
        throw data_error("malformed run log line " + std::to_string(i + 1) + " in " + f.string());
      } catch (const nlohmann::json::exception&) {
        if (torn_tail) continue;
        throw data_error("malformed run log line " + std::to_string(i + 1) + " in " + f.string());
      }
    }
  }
  for (auto& [key, logs] : set) {
    std::sort(logs.begin(), logs.end(), [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
    for (std::size_t i = 1; i < logs.size(); ++i) {
      if (logs[i].task_id == logs[i - 1].task_id) {
        throw data_error("duplicate task " + logs[i].task_id + " for " + key.model + "/" +
                         std::string(to_string(key.mode)));
      }
    }
  }
  return set;
}

inline std::vector<std::filesystem::path> discover_logs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with("__baseline.jsonl") || ends_with("__agent.jsonl")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace csv {

inline std::string field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string num(double v, int decimals = 6) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string general(double v) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string row(std::initializer_list<std::string> fields) {
  std::string out;
  bool first = true;
  for (const auto& f : fields) {
    if (!first) out += ',';
    out += field(f);
    first = false;
  }
  out += '\n';
  return out;
}

}  // namespace csv

struct ClassifiedFailure {
  std::string task_id;
  std::string model;
  RunMode mode;
  Classification classification;
  Language language;
};

inline std::vector<ClassifiedFailure> classify_logs(const LogSet& logs) {
  std::vector<ClassifiedFailure> out;
  for (const auto& [key, group] : logs) {
    for (const auto& l : group) {
      if (l.succeeded) continue;
      const auto& fin = l.final_iteration();
      out.push_back({l.task_id, key.model, key.mode, classify_failure(fin), detect_language(fin.extraction).language});
    }
  }
  return out;
}

inline std::string failures_csv(const std::vector<ClassifiedFailure>& failures) {
  std::string out = csv::row({"task_id", "model", "mode", "category", "votes_syntax", "votes_undef", "votes_link"});
  for (const auto& f : failures) {
    out += csv::row({f.task_id, f.model, std::string(to_string(f.mode)), std::string(to_string(f.classification.category)),
                     std::to_string(f.classification.votes_syntax), std::to_string(f.classification.votes_undef),
                     std::to_string(f.classification.votes_link)});
  }
  return out;
}

inline void write_failures(const std::filesystem::path& path, const std::vector<ClassifiedFailure>& failures) {
  text::write_file(path, failures_csv(failures));
  text::write_file(path.string() + ".meta.json",
                   nlohmann::ordered_json{{"taxonomy_version", kTaxonomyVersion}}.dump() + "\n");
}

// Every classification sidecar must carry the current cascade version.
inline void check_taxonomy_versions(const std::vector<std::filesystem::path>& classified) {
  for (const auto& f : classified) {
    const auto meta_path = f.string() + ".meta.json";
    const auto j = nlohmann::json::parse(text::read_file(meta_path), nullptr, false);
    if (j.is_discarded() || !j.contains("taxonomy_version") || !j["taxonomy_version"].is_number_integer()) {
      throw data_error("classification " + f.string() + " has no taxonomy version");
    }
    const int v = j["taxonomy_version"].get<int>();
    if (v != kTaxonomyVersion) {
      throw data_error("classification " + f.string() + " uses taxonomy version " + std::to_string(v) +
                       ", expected " + std::to_string(kTaxonomyVersion));
    }
  }
}

struct SuccessRow {
  std::string model;
  double parameter_count = 0;
  RunMode mode;
  std::size_t tasks = 0;
  std::size_t successes = 0;
  double success_rate = 0;
  metrics::SimilarityScore similarity;
};

struct CorrelationRow {
  std::string name;
  std::size_t n = 0;
  std::optional<double> r;
  std::string note;
};

struct ReportBundle {
  std::vector<SuccessRow> success;
  std::map<std::string, metrics::IterationHistogram> iterations;
  std::map<std::string, std::vector<metrics::TransitionStats>> transitions;
  std::map<std::string, BucketResult> buckets;  // by task id
  std::vector<ClassifiedFailure> failures;
  ReductionTable reduction_all;
  ReductionTable reduction_significant;
  std::vector<CorrelationRow> correlations;
};

namespace detail {

inline CorrelationRow correlate(std::string name, const std::vector<double>& xs, const std::vector<double>& ys) {
  CorrelationRow row{std::move(name), xs.size(), std::nullopt, ""};
  try {
    row.r = metrics::pearson(xs, ys);
  } catch (const metrics::PearsonError& e) {
    row.note = e.what();
  }
  return row;
}

}  // namespace detail

// Pure function of logs, corpus and configuration.
inline ReportBundle build_report(const LogSet& logs, const TaskCorpus& corpus, const RunConfig& cfg) {
  ReportBundle b;
  std::map<std::string, double> sizes;
  for (const auto& m : cfg.models) sizes[m.spec.name] = m.spec.parameter_count;

  for (const auto& [key, group] : logs) {
    SuccessRow row;
    row.model = key.model;
    row.parameter_count = sizes.count(key.model) ? sizes[key.model] : 0.0;
    row.mode = key.mode;
    row.tasks = group.size();
    row.successes = metrics::success_count(group);
    row.success_rate = metrics::success_rate(group);
    metrics::SimilarityScore sum;
    for (const auto& l : group) {
      const Task* t = corpus.find(l.task_id);
      if (!t) throw data_error("log references unknown task " + l.task_id);
      const auto s = metrics::similarity(l.final_iteration().extraction.code, t->ground_truth);
      sum.bleu += s.bleu;
      sum.rouge1_recall += s.rouge1_recall;
      sum.rouge1_precision += s.rouge1_precision;
      sum.rouge1_f1 += s.rouge1_f1;
    }
    const double n = static_cast<double>(group.size());
    row.similarity = {sum.bleu / n, sum.rouge1_recall / n, sum.rouge1_precision / n, sum.rouge1_f1 / n};
    b.success.push_back(row);
    if (key.mode == RunMode::agent) {
      b.iterations[key.model] = metrics::iteration_histogram(group);
      b.transitions[key.model] = metrics::transition_stats(group, std::max(5, cfg.loop.max_iterations));
    }
  }

  // Buckets over models that have both modes, on tasks every such group covers.
  std::vector<TaskRunLog> agent_logs;
  std::vector<TaskRunLog> baseline_logs;
  std::map<std::string, int> coverage;
  int paired_groups = 0;
  for (const auto& [key, group] : logs) {
    const LogGroupKey other{key.model, key.mode == RunMode::agent ? RunMode::baseline : RunMode::agent};
    if (!logs.count(other)) continue;
    ++paired_groups;
    for (const auto& l : group) {
      ++coverage[l.task_id];
      (key.mode == RunMode::agent ? agent_logs : baseline_logs).push_back(l);
    }
  }
  for (const auto& [task_id, count] : coverage) {
    if (count == paired_groups) b.buckets[task_id] = bucket_improvement(task_id, agent_logs, baseline_logs, cfg.thresholds);
  }

  b.failures = classify_logs(logs);
  std::vector<ErrorCategory> base_all, agent_all, base_sig, agent_sig;
  for (const auto& f : b.failures) {
    const bool sig = b.buckets.count(f.task_id) &&
                     b.buckets[f.task_id].bucket == ImprovementBucket::SignificantImprovement;
    auto& all = f.mode == RunMode::agent ? agent_all : base_all;
    all.push_back(f.classification.category);
    if (sig) (f.mode == RunMode::agent ? agent_sig : base_sig).push_back(f.classification.category);
  }
  b.reduction_all = category_reduction(base_all, agent_all);
  b.reduction_significant = category_reduction(base_sig, agent_sig);

  for (auto mode : {RunMode::baseline, RunMode::agent}) {
    std::vector<double> xs, ys;
    for (const auto& row : b.success) {
      if (row.mode != mode || row.parameter_count <= 0) continue;
      xs.push_back(row.parameter_count);
      ys.push_back(row.success_rate);
    }
    b.correlations.push_back(
        detail::correlate("parameter_count_vs_" + std::string(to_string(mode)) + "_success_rate", xs, ys));
  }
  std::vector<double> sol, desc, delta;
  for (const auto& [task_id, r] : b.buckets) {
    const Task* t = corpus.find(task_id);
    sol.push_back(static_cast<double>(t->solution_tokens));
    desc.push_back(static_cast<double>(t->description_tokens));
    delta.push_back(r.delta);
  }
  b.correlations.push_back(detail::correlate("solution_tokens_vs_delta", sol, delta));
  b.correlations.push_back(detail::correlate("description_tokens_vs_delta", desc, delta));
  return b;
}

namespace detail {

inline std::string reduction_rows(const std::string& scope, const ReductionTable& t) {
  std::string out;
  for (auto c : kAllCategories) {
    const auto& r = t.per_category.at(c);
    out += csv::row({scope, std::string(to_string(c)), std::to_string(r.count_base), std::to_string(r.count_agent),
                     r.reduction ? csv::num(*r.reduction) : ""});
  }
  out += csv::row({scope, "Total", std::to_string(t.overall.count_base), std::to_string(t.overall.count_agent),
                   t.overall.reduction ? csv::num(*t.overall.reduction) : ""});
  return out;
}

inline std::string pct(double rate) { return csv::num(rate * 100.0, 1) + "%"; }

}  // namespace detail

// Writes the CSV tables and summary.md into `dir`; returns the file names.
inline std::vector<std::string> write_report(const ReportBundle& b, const TaskCorpus& corpus,
                                             const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const std::string& content) {
    text::write_file(dir / name, content);
    files.push_back(name);
  };

  std::string success = csv::row({"model", "parameter_count", "mode", "tasks", "successes", "success_rate", "bleu",
                                  "rouge1_recall", "rouge1_precision", "rouge1_f1", "codebert_precision",
                                  "codebert_recall"});
  for (const auto& r : b.success) {
    success += csv::row({r.model, csv::general(r.parameter_count), std::string(to_string(r.mode)), std::to_string(r.tasks),
                         std::to_string(r.successes), csv::num(r.success_rate), csv::num(r.similarity.bleu),
                         csv::num(r.similarity.rouge1_recall), csv::num(r.similarity.rouge1_precision),
                         csv::num(r.similarity.rouge1_f1), "", ""});
  }
  emit("success_table.csv", success);

  std::string iterations = "model";
  std::size_t width = 5;
  for (const auto& [m, h] : b.iterations) width = std::max(width, h.counts.size());
  for (std::size_t k = 1; k <= width; ++k) iterations += ",iter_" + std::to_string(k);
  iterations += ",total\n";
  for (const auto& [m, h] : b.iterations) {
    iterations += csv::field(m);
    for (std::size_t k = 0; k < width; ++k) iterations += "," + std::to_string(k < h.counts.size() ? h.counts[k] : 0);
    iterations += "," + std::to_string(h.total()) + "\n";
  }
  emit("iteration_table.csv", iterations);

  std::string transitions =
      csv::row({"model", "transition", "pairs", "scored_pairs", "bleu", "rouge1_recall", "rows_changed"});
  for (const auto& [m, ts] : b.transitions) {
    for (const auto& t : ts) {
      transitions += csv::row({m, std::to_string(t.from) + "-" + std::to_string(t.from + 1), std::to_string(t.pairs),
                               std::to_string(t.scored_pairs), t.scored_pairs ? csv::num(t.bleu) : "",
                               t.scored_pairs ? csv::num(t.rouge1_recall) : "",
                               t.pairs ? csv::num(t.rows_changed, 3) : ""});
    }
  }
  emit("transition_table.csv", transitions);

  std::string buckets = csv::row({"task_id", "category", "agents_solved", "baselines_solved", "delta", "bucket"});
  std::map<ImprovementBucket, std::size_t> bucket_counts;
  std::map<std::pair<ImprovementBucket, std::string>, std::size_t> bucket_categories;
  for (const auto& [task_id, r] : b.buckets) {
    const Task* t = corpus.find(task_id);
    buckets += csv::row({task_id, t->category, std::to_string(r.agents_solved), std::to_string(r.baselines_solved),
                         std::to_string(r.delta), std::string(to_string(r.bucket))});
    ++bucket_counts[r.bucket];
    ++bucket_categories[{r.bucket, t->category}];
  }
  emit("buckets.csv", buckets);
  std::string bucket_summary = csv::row({"bucket", "tasks"});
  for (auto k : {ImprovementBucket::NoImprovement, ImprovementBucket::SlightImprovement,
                 ImprovementBucket::SignificantImprovement}) {
    bucket_summary += csv::row({std::string(to_string(k)), std::to_string(bucket_counts[k])});
  }
  emit("bucket_summary.csv", bucket_summary);
  std::string bucket_cat = csv::row({"bucket", "category", "tasks"});
  for (const auto& [k, n] : bucket_categories) {
    bucket_cat += csv::row({std::string(to_string(k.first)), k.second, std::to_string(n)});
  }
  emit("bucket_categories.csv", bucket_cat);

  std::string failures = failures_csv(b.failures);
  emit("failures.csv", failures);
  emit("failures.csv.meta.json", nlohmann::ordered_json{{"taxonomy_version", kTaxonomyVersion}}.dump() + "\n");

  std::string categories = csv::row({"scope", "category", "count_base", "count_agent", "reduction"});
  categories += detail::reduction_rows("all", b.reduction_all);
  categories += detail::reduction_rows("significant_improvement", b.reduction_significant);
  emit("error_categories.csv", categories);

  std::map<std::pair<RunMode, Language>, std::size_t> languages;
  for (const auto& f : b.failures) {
    if (f.classification.category == ErrorCategory::LanguageMismatch) ++languages[{f.mode, f.language}];
  }
  std::string lang = csv::row({"mode", "language", "count"});
  for (const auto& [k, n] : languages) {
    lang += csv::row({std::string(to_string(k.first)), std::string(to_string(k.second)), std::to_string(n)});
  }
  emit("language_mismatch.csv", lang);

  std::string corr = csv::row({"pair", "n", "r", "note"});
  for (const auto& c : b.correlations) {
    corr += csv::row({c.name, std::to_string(c.n), c.r ? csv::num(*c.r) : "", c.note});
  }
  emit("correlations.csv", corr);

  std::ostringstream md;
  md << "# Compile-feedback benchmark report\n\n";
  md << "Tasks in corpus: " << corpus.size() << ". Taxonomy version " << kTaxonomyVersion
     << ". R1 is ROUGE-1 recall; precision and F1 are in success_table.csv.\n\n";
  md << "## Compile success\n\n| Model | Size | Mode | Succ | R1 | BLEU |\n|---|---|---|---|---|---|\n";
  for (const auto& r : b.success) {
    md << "| " << r.model << " | " << csv::general(r.parameter_count) << " | " << to_string(r.mode) << " | "
       << detail::pct(r.success_rate) << " | " << csv::num(r.similarity.rouge1_recall, 3) << " | "
       << csv::num(r.similarity.bleu, 3) << " |\n";
  }
  md << "\n## First success per iteration\n\n| Model |";
  for (std::size_t k = 1; k <= width; ++k) md << " " << k << " |";
  md << "\n|---|";
  for (std::size_t k = 1; k <= width; ++k) md << "---|";
  md << "\n";
  for (const auto& [m, h] : b.iterations) {
    md << "| " << m << " |";
    for (std::size_t k = 0; k < width; ++k) md << " " << (k < h.counts.size() ? h.counts[k] : 0) << " |";
    md << "\n";
  }
  md << "\n## Improvement buckets\n\n| Bucket | Tasks |\n|---|---|\n";
  for (auto k : {ImprovementBucket::NoImprovement, ImprovementBucket::SlightImprovement,
                 ImprovementBucket::SignificantImprovement}) {
    md << "| " << to_string(k) << " | " << bucket_counts[k] << " |\n";
  }
  md << "\n## Failure categories (all tasks)\n\n| Category | Baseline | Agent | Reduction |\n|---|---|---|---|\n";
  for (auto c : kAllCategories) {
    const auto& r = b.reduction_all.per_category.at(c);
    md << "| " << to_string(c) << " | " << r.count_base << " | " << r.count_agent << " | "
       << (r.reduction ? detail::pct(*r.reduction) : "n/a") << " |\n";
  }
  md << "| Total | " << b.reduction_all.overall.count_base << " | " << b.reduction_all.overall.count_agent << " | "
     << (b.reduction_all.overall.reduction ? detail::pct(*b.reduction_all.overall.reduction) : "n/a") << " |\n";
  md << "\n## Correlations\n\n| Pair | n | r |\n|---|---|---|\n";
  for (const auto& c : b.correlations) {
    md << "| " << c.name << " | " << c.n << " | " << (c.r ? csv::num(*c.r, 3) : "n/a (" + c.note + ")") << " |\n";
  }
  emit("summary.md", md.str());
  return files;
}

inline std::vector<std::string> cmd_report(const RunConfig& cfg, std::vector<std::filesystem::path> log_files,
                                           const std::vector<std::filesystem::path>& classified = {}) {
  check_taxonomy_versions(classified);
  if (log_files.empty()) log_files = discover_logs(cfg.out_dir);
  if (log_files.empty()) throw data_error("no run logs found in " + cfg.out_dir.string());
  const auto corpus = load_canonical_corpus(cfg);
  const auto logs = read_logs(log_files);
  const auto bundle = build_report(logs, corpus, cfg);
  return write_report(bundle, corpus, cfg.out_dir / "report");
}

inline std::size_t cmd_classify(const RunConfig& cfg, std::vector<std::filesystem::path> log_files) {
  if (log_files.empty()) log_files = discover_logs(cfg.out_dir);
  if (log_files.empty()) throw data_error("no run logs found in " + cfg.out_dir.string());
  const auto failures = classify_logs(read_logs(log_files));
  std::filesystem::create_directories(cfg.out_dir);
  write_failures(cfg.out_dir / "failures.csv", failures);
  return failures.size();
}

// fixtures regen --------------------------------------------------------------

// Compiles every *.c in `dir` and records its stderr bit-exact as <stem>.stderr,
// with the compiler version alongside.
inline std::size_t regenerate_compiler_fixtures(const std::filesystem::path& dir, const CompilerConfig& cc) {
  const std::string version = compiler_version(cc);
  std::vector<std::filesystem::path> sources;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".c") sources.push_back(e.path());
  }
  std::sort(sources.begin(), sources.end());
  for (const auto& src : sources) {
    const auto outcome = compile(text::read_file(src), cc);
    auto stem = src;
    stem.replace_extension();
    text::write_file(stem.string() + ".stderr", outcome.stderr_raw);
    nlohmann::ordered_json meta = {{"compiler", cc.compiler_path.string()},
                                   {"compiler_version", version},
                                   {"flags", cc.flags},
                                   {"exit_code", outcome.exit_code},
                                   {"success", outcome.success}};
    text::write_file(stem.string() + ".meta.json", meta.dump(2) + "\n");
  }
  text::write_file(dir / "compiler_version.txt", version + "\n");
  return sources.size();
}

}  // namespace cfbench
