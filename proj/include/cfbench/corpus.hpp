#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "cfbench/compiler.hpp"
#include "cfbench/error.hpp"
#include "cfbench/parallel.hpp"
#include "cfbench/text.hpp"

namespace cfbench {

// Whitespace token count (Unicode White_Space delimiters, no subword model).
inline std::size_t token_count(std::string_view s) { return text::split_unicode_whitespace(s).size(); }

struct Task {
  std::string id;
  std::string name;
  std::string description;
  std::string category;
  std::string ground_truth;
  std::size_t description_tokens = 0;
  std::size_t solution_tokens = 0;
};

inline Task make_task(std::string id, std::string name, std::string description, std::string category,
                      std::string ground_truth) {
  Task t{std::move(id), std::move(name), std::move(description), std::move(category), std::move(ground_truth)};
  t.description_tokens = token_count(t.description);
  t.solution_tokens = token_count(t.ground_truth);
  return t;
}

struct CorpusProvenance {
  std::string source;
  std::string filter;  // empty until filter_compilable has run
};

struct TaskCorpus {
  std::vector<Task> tasks;  // sorted by id, ids unique
  CorpusProvenance provenance;

  const Task* find(std::string_view id) const {
    auto it = std::lower_bound(tasks.begin(), tasks.end(), id,
                               [](const Task& t, std::string_view key) { return t.id < key; });
    return it != tasks.end() && it->id == id ? &*it : nullptr;
  }
  std::size_t size() const { return tasks.size(); }
};

// One line of a skip or reject report.
struct ReportEntry {
  std::string id;
  std::string reason;
  std::string detail;
};

struct LoadResult {
  TaskCorpus corpus;
  std::vector<ReportEntry> skipped;
};

struct FilterResult {
  TaskCorpus corpus;
  std::vector<ReportEntry> rejected;
};

namespace detail {

inline void sort_and_check(std::vector<Task>& tasks) {
  std::sort(tasks.begin(), tasks.end(), [](const Task& a, const Task& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < tasks.size(); ++i) {
    if (tasks[i].id == tasks[i - 1].id) throw data_error("duplicate task id: " + tasks[i].id);
  }
}

inline void check_malformed_ratio(std::size_t malformed, std::size_t total, const std::string& source) {
  if (total > 0 && malformed * 2 > total) {
    throw data_error(std::to_string(malformed) + " of " + std::to_string(total) + " records in " + source +
                     " are malformed");
  }
}

inline std::optional<std::string> string_field(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

inline LoadResult load_jsonl(const std::filesystem::path& path) {
  const std::string content = text::read_file(path);
  LoadResult r;
  r.corpus.provenance.source = path.string();
  std::size_t records = 0;
  std::size_t malformed = 0;
  std::size_t index = 0;
  for (auto line : text::split_lines(content)) {
    ++index;
    if (text::is_blank(line)) continue;
    ++records;
    auto bad = [&](const std::string& why) {
      ++malformed;
      r.skipped.push_back({"", "malformed", "record " + std::to_string(index) + ": " + why});
    };
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      bad("not a JSON object");
      continue;
    }
    auto id = string_field(j, "id");
    auto name = string_field(j, "name");
    auto description = string_field(j, "description");
    auto category = string_field(j, "category");
    auto ground_truth = string_field(j, "ground_truth");
    if (!id || !name || !description || !category || !ground_truth) {
      bad("missing or non-string field");
      continue;
    }
    if (id->empty()) {
      bad("empty id");
      continue;
    }
    if (ground_truth->empty()) {
      r.skipped.push_back({*id, "no_c_solution", "empty ground_truth"});
      continue;
    }
    r.corpus.tasks.push_back(make_task(std::move(*id), std::move(*name), std::move(*description),
                                       std::move(*category), std::move(*ground_truth)));
  }
  check_malformed_ratio(malformed, records, path.string());
  sort_and_check(r.corpus.tasks);
  return r;
}

inline std::string title_from_folder(std::string_view folder) {
  std::string name(folder);
  std::replace(name.begin(), name.end(), '-', ' ');
  std::replace(name.begin(), name.end(), '_', ' ');
  return name;
}

inline std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::optional<std::filesystem::path> first_c_file(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) return std::nullopt;
  for (const auto& p : sorted_entries(dir)) {
    if (std::filesystem::is_regular_file(p) && p.extension() == ".c") return p;
  }
  return std::nullopt;
}

// First listed category, or nullopt when the metadata has none.
inline std::optional<std::string> category_from_meta(const std::filesystem::path& meta) {
  const YAML::Node root = YAML::LoadFile(meta.string());
  const YAML::Node cat = root["category"];
  if (!cat) return std::nullopt;
  if (cat.IsScalar()) return cat.as<std::string>();
  if (cat.IsSequence() && cat.size() > 0 && cat[0].IsScalar()) return cat[0].as<std::string>();
  return std::nullopt;
}

// RosettaCodeData layout: [Task/]<task>/{00-TASK.txt, 00-META.yaml, C/*.c}.
inline LoadResult load_tree(const std::filesystem::path& root) {
  std::filesystem::path base = root;
  if (std::filesystem::is_directory(root / "Task")) base = root / "Task";
  LoadResult r;
  r.corpus.provenance.source = root.string();
  std::size_t records = 0;
  std::size_t malformed = 0;
  for (const auto& dir : sorted_entries(base)) {
    if (!std::filesystem::is_directory(dir)) continue;
    ++records;
    const std::string id = dir.filename().string();
    try {
      auto c_file = first_c_file(dir / "C");
      if (!c_file) c_file = first_c_file(dir);
      if (!c_file) {
        r.skipped.push_back({id, "no_c_solution", "no .c file under " + dir.string()});
        continue;
      }
      std::string ground_truth = text::read_file(*c_file);
      if (text::is_blank(ground_truth)) {
        r.skipped.push_back({id, "no_c_solution", "empty " + c_file->string()});
        continue;
      }
      std::string description;
      for (const char* name : {"00-TASK.txt", "00-DESCRIPTION.txt", "description.txt", "README.md"}) {
        if (std::filesystem::is_regular_file(dir / name)) {
          description = text::read_file(dir / name);
          break;
        }
      }
      std::string category = "Uncategorized";
      if (std::filesystem::is_regular_file(dir / "00-META.yaml")) {
        if (auto c = category_from_meta(dir / "00-META.yaml")) category = *c;
      }
      r.corpus.tasks.push_back(
          make_task(id, title_from_folder(id), std::move(description), std::move(category), std::move(ground_truth)));
    } catch (const YAML::Exception& e) {
      ++malformed;
      r.skipped.push_back({id, "malformed", "record " + std::to_string(records) + ": " + e.what()});
    } catch (const Error& e) {
      ++malformed;
      r.skipped.push_back({id, "malformed", "record " + std::to_string(records) + ": " + e.what()});
    }
  }
  check_malformed_ratio(malformed, records, root.string());
  sort_and_check(r.corpus.tasks);
  return r;
}

}  // namespace detail

inline LoadResult load_corpus(const std::filesystem::path& path) {
  std::error_code ec;
  if (std::filesystem::is_directory(path, ec)) return detail::load_tree(path);
  if (std::filesystem::is_regular_file(path, ec)) return detail::load_jsonl(path);
  throw data_error("corpus path is not readable: " + path.string());
}

inline nlohmann::ordered_json to_json(const Task& t) {
  nlohmann::ordered_json j;
  j["id"] = t.id;
  j["name"] = t.name;
  j["description"] = t.description;
  j["category"] = t.category;
  j["ground_truth"] = t.ground_truth;
  return j;
}

// Canonical JSON Lines serialization, one task per line in id order.
inline std::string serialize_corpus(const TaskCorpus& corpus) {
  std::string out;
  for (const auto& t : corpus.tasks) {
    out += to_json(t).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

inline std::string serialize_report(const std::vector<ReportEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["reason"] = e.reason;
    j["detail"] = e.detail;
    out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::string first_diagnostic_line(const CompileOutcome& o) {
  if (o.timed_out) return "compile timed out";
  for (const auto& d : o.diagnostics) {
    if (!d.is_failure()) continue;
    for (auto line : text::split_lines(d.raw)) {
      if (text::contains(line, d.message)) return std::string(line);
    }
    return d.message;
  }
  return "exit code " + std::to_string(o.exit_code);
}

}  // namespace detail

// Keeps the tasks whose ground truth compiles as is under `cc`.
inline FilterResult filter_compilable(const TaskCorpus& corpus, const CompilerConfig& cc,
                                      std::size_t jobs = default_jobs()) {
  cc.validate();
  resolve_compiler(cc);
  std::vector<CompileOutcome> outcomes(corpus.tasks.size());
  std::vector<std::string> oversize(corpus.tasks.size());
  parallel_for(corpus.tasks.size(), jobs, [&](std::size_t i) {
    try {
      outcomes[i] = compile(corpus.tasks[i].ground_truth, cc);
    } catch (const SourceTooLargeError& e) {
      oversize[i] = e.what();
    }
  });
  FilterResult r;
  r.corpus.provenance = corpus.provenance;
  r.corpus.provenance.filter = cc.compiler_path.string();
  for (const auto& f : cc.flags) r.corpus.provenance.filter += " " + f;
  for (std::size_t i = 0; i < corpus.tasks.size(); ++i) {
    if (!oversize[i].empty()) {
      r.rejected.push_back({corpus.tasks[i].id, "too_large", oversize[i]});
    } else if (outcomes[i].success) {
      r.corpus.tasks.push_back(corpus.tasks[i]);
    } else {
      r.rejected.push_back({corpus.tasks[i].id, "compile_failed", detail::first_diagnostic_line(outcomes[i])});
    }
  }
  return r;
}

}  // namespace cfbench
