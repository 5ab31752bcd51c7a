#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfbench/agent_loop.hpp"
#include "cfbench/extraction.hpp"
#include "cfbench/text.hpp"

namespace cfbench {

// Bumped whenever the classification cascade changes meaning.
inline constexpr int kTaxonomyVersion = 1;

enum class ErrorCategory { LanguageMismatch, MissingCode, MarkdownError, SyntaxError, UndefinedReference, LinkingError };

inline constexpr std::array kAllCategories = {ErrorCategory::LanguageMismatch,   ErrorCategory::MissingCode,
                                              ErrorCategory::MarkdownError,      ErrorCategory::SyntaxError,
                                              ErrorCategory::UndefinedReference, ErrorCategory::LinkingError};

inline std::string_view to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::LanguageMismatch: return "LanguageMismatch";
    case ErrorCategory::MissingCode: return "MissingCode";
    case ErrorCategory::MarkdownError: return "MarkdownError";
    case ErrorCategory::SyntaxError: return "SyntaxError";
    case ErrorCategory::UndefinedReference: return "UndefinedReference";
    case ErrorCategory::LinkingError: return "LinkingError";
  }
  return "SyntaxError";
}

inline std::optional<ErrorCategory> category_from_string(std::string_view s) {
  for (auto c : kAllCategories) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

struct Classification {
  ErrorCategory category = ErrorCategory::SyntaxError;
  int votes_syntax = 0;
  int votes_undef = 0;
  int votes_link = 0;
};

namespace detail {

// Replaces comments and string/char literals with spaces, keeping line breaks.
inline std::string blank_comments_and_literals(std::string_view code) {
  std::string out(code);
  enum class State { code, line_comment, block_comment, string };
  State st = State::code;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const char c = out[i];
    const char next = i + 1 < out.size() ? out[i + 1] : '\0';
    switch (st) {
      case State::code:
        if (c == '/' && next == '/') {
          st = State::line_comment;
          out[i] = out[i + 1] = ' ';
          ++i;
        } else if (c == '/' && next == '*') {
          st = State::block_comment;
          out[i] = out[i + 1] = ' ';
          ++i;
        } else if (c == '"') {
          st = State::string;
          out[i] = ' ';
        } else if (c == '\'') {
          // A char literal only when it closes within a few bytes on this line;
          // otherwise it is an apostrophe in prose.
          std::size_t j = i + 1;
          while (j < out.size() && j <= i + 6 && out[j] != '\'' && out[j] != '\n') j += (out[j] == '\\') ? 2 : 1;
          if (j < out.size() && j <= i + 7 && out[j] == '\'') {
            for (std::size_t k = i; k <= j; ++k) out[k] = ' ';
            i = j;
          }
        }
        break;
      case State::line_comment:
        if (c == '\n') {
          st = State::code;
        } else {
          out[i] = ' ';
        }
        break;
      case State::block_comment:
        if (c == '*' && next == '/') {
          out[i] = out[i + 1] = ' ';
          ++i;
          st = State::code;
        } else if (c != '\n') {
          out[i] = ' ';
        }
        break;
      case State::string:
        if (c == '\\' && next != '\n' && next != '\0') {
          out[i] = out[i + 1] = ' ';
          ++i;
        } else if (c == '"' || c == '\n') {
          if (c == '"') out[i] = ' ';
          st = State::code;
        } else {
          out[i] = ' ';
        }
        break;
    }
  }
  return out;
}

inline const std::set<std::string, std::less<>>& c_keywords() {
  static const std::set<std::string, std::less<>> kw = {
      "auto",   "break",  "case",     "char",   "const",    "continue", "default", "do",     "double",
      "else",   "enum",   "extern",   "float",  "for",      "goto",     "if",      "inline", "int",
      "long",   "register", "restrict", "return", "short",  "signed",   "sizeof",  "static", "struct",
      "switch", "typedef", "union",   "unsigned", "void",   "volatile", "while",   "bool",   "true",
      "false",  "include", "define",  "ifdef",  "ifndef",   "endif",    "elif",    "pragma", "undef"};
  return kw;
}

inline bool is_natural_word(std::string_view tok) {
  while (!tok.empty() && (tok.back() == '.' || tok.back() == ',' || tok.back() == ':' || tok.back() == '!' ||
                          tok.back() == '?')) {
    tok.remove_suffix(1);
  }
  if (tok.empty() || !text::is_alpha(tok.front())) return false;
  for (char c : tok) {
    if (!text::is_alpha(c) && c != '\'' && c != '-') return false;
  }
  return c_keywords().find(text::to_lower(tok)) == c_keywords().end();
}

enum class LineKind { neutral, prose, code };

// `line` has comments and literals already blanked.
inline LineKind line_kind(std::string_view line) {
  const auto t = text::trim(line);
  if (t.empty()) return LineKind::neutral;
  const bool has_terminator = t.find_first_of(";{}") != std::string_view::npos;
  if (!has_terminator) {
    int run = 0;
    int best = 0;
    for (auto tok : text::split_unicode_whitespace(t)) {
      run = is_natural_word(tok) ? run + 1 : 0;
      best = std::max(best, run);
    }
    if (best >= 3) return LineKind::prose;
  }
  if (has_terminator || t.find('=') != std::string_view::npos) return LineKind::code;
  if (t.front() == '#') {
    auto d = text::trim_left(t.substr(1));
    for (std::string_view directive : {"include", "define", "if", "endif", "else", "elif", "undef", "pragma", "error"}) {
      if (d.rfind(directive, 0) == 0) return LineKind::code;
    }
    return LineKind::neutral;
  }
  // identifier immediately followed by '(' : a call or a declarator
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] == '(' && text::is_word_char(t[i - 1]) && t.find(')', i) != std::string_view::npos) return LineKind::code;
  }
  return LineKind::neutral;
}

struct LineCensus {
  int prose = 0;
  int code = 0;
};

inline LineCensus census(std::string_view code) {
  LineCensus c;
  const std::string blanked = blank_comments_and_literals(code);
  for (auto line : text::split_lines(blanked)) {
    switch (line_kind(line)) {
      case LineKind::prose: ++c.prose; break;
      case LineKind::code: ++c.code; break;
      case LineKind::neutral: break;
    }
  }
  return c;
}

inline bool is_header_missing(const Diagnostic& d) {
  return d.severity == Severity::fatal && text::contains(d.message, "No such file or directory");
}

inline bool is_link_summary(const Diagnostic& d) {
  return text::contains(d.message, "ld returned") && text::contains(d.message, "exit status");
}

}  // namespace detail

// Output-level checks first (no code, wrong language, unfenced prose mixed
// with code), then a vote over the parsed diagnostics.
inline Classification classify_failure(const IterationRecord& final) {
  if (final.compile.success) throw precondition_error("classify_failure: the iteration compiled");
  Classification r;
  const auto& ex = final.extraction;
  const auto lines = detail::census(ex.code);
  if (lines.code == 0) {
    r.category = ErrorCategory::MissingCode;
    return r;
  }
  if (detect_language(ex).language != Language::c) {
    r.category = ErrorCategory::LanguageMismatch;
    return r;
  }
  if (!ex.had_fences && lines.prose > 0) {
    r.category = ErrorCategory::MarkdownError;
    return r;
  }
  for (const auto& d : final.compile.diagnostics) {
    if (detail::is_header_missing(d)) {
      ++r.votes_link;
    } else if (d.severity == Severity::linker) {
      if (text::contains(d.message, "undefined reference")) {
        ++r.votes_undef;
      } else if (!detail::is_link_summary(d)) {
        ++r.votes_link;
      }
    } else if (d.severity == Severity::error || d.severity == Severity::fatal) {
      ++r.votes_syntax;
    }
  }
  if (r.votes_syntax >= r.votes_undef && r.votes_syntax >= r.votes_link) {
    r.category = ErrorCategory::SyntaxError;
  } else if (r.votes_undef >= r.votes_link) {
    r.category = ErrorCategory::UndefinedReference;
  } else {
    r.category = ErrorCategory::LinkingError;
  }
  return r;
}

enum class ImprovementBucket { NoImprovement, SlightImprovement, SignificantImprovement };

inline std::string_view to_string(ImprovementBucket b) {
  switch (b) {
    case ImprovementBucket::NoImprovement: return "NoImprovement";
    case ImprovementBucket::SlightImprovement: return "SlightImprovement";
    case ImprovementBucket::SignificantImprovement: return "SignificantImprovement";
  }
  return "NoImprovement";
}

struct BucketThresholds {
  int slight_min = 1;
  int significant_min = 4;

  void validate() const {
    if (slight_min < 1 || significant_min <= slight_min) {
      throw usage_error("bucket thresholds need 1 <= slight_min < significant_min");
    }
  }
};

inline ImprovementBucket bucket_for_delta(int delta, const BucketThresholds& t) {
  if (delta >= t.significant_min) return ImprovementBucket::SignificantImprovement;
  if (delta >= t.slight_min) return ImprovementBucket::SlightImprovement;
  return ImprovementBucket::NoImprovement;
}

struct BucketResult {
  ImprovementBucket bucket = ImprovementBucket::NoImprovement;
  int delta = 0;
  int agents_solved = 0;
  int baselines_solved = 0;
};

// delta = (#models whose agent solved the task) - (#models whose baseline did).
inline BucketResult bucket_improvement(std::string_view task_id, std::span<const TaskRunLog> agent_logs,
                                       std::span<const TaskRunLog> baseline_logs, const BucketThresholds& t = {}) {
  std::map<std::string, bool> agents;
  std::map<std::string, bool> baselines;
  for (const auto& l : agent_logs) {
    if (l.task_id == task_id) agents[l.model_name] = l.succeeded;
  }
  for (const auto& l : baseline_logs) {
    if (l.task_id == task_id) baselines[l.model_name] = l.succeeded;
  }
  auto names = [](const std::map<std::string, bool>& m) {
    std::vector<std::string> out;
    for (const auto& [k, v] : m) out.push_back(k);
    return out;
  };
  if (names(agents) != names(baselines)) {
    throw precondition_error("bucket_improvement: model sets differ for task " + std::string(task_id));
  }
  BucketResult r;
  for (const auto& [k, v] : agents) r.agents_solved += v ? 1 : 0;
  for (const auto& [k, v] : baselines) r.baselines_solved += v ? 1 : 0;
  r.delta = r.agents_solved - r.baselines_solved;
  r.bucket = bucket_for_delta(r.delta, t);
  return r;
}

struct CategoryReduction {
  std::size_t count_base = 0;
  std::size_t count_agent = 0;
  std::optional<double> reduction;  // 1 - agent/base; absent when base is 0
};

struct ReductionTable {
  std::map<ErrorCategory, CategoryReduction> per_category;
  CategoryReduction overall;
};

inline CategoryReduction make_reduction(std::size_t base, std::size_t agent) {
  CategoryReduction r{base, agent, std::nullopt};
  if (base > 0) r.reduction = 1.0 - static_cast<double>(agent) / static_cast<double>(base);
  return r;
}

inline ReductionTable category_reduction(std::span<const ErrorCategory> baseline_failures,
                                         std::span<const ErrorCategory> agent_failures) {
  ReductionTable t;
  for (auto c : kAllCategories) {
    const auto base = static_cast<std::size_t>(std::count(baseline_failures.begin(), baseline_failures.end(), c));
    const auto agent = static_cast<std::size_t>(std::count(agent_failures.begin(), agent_failures.end(), c));
    t.per_category[c] = make_reduction(base, agent);
  }
  t.overall = make_reduction(baseline_failures.size(), agent_failures.size());
  return t;
}

}  // namespace cfbench
