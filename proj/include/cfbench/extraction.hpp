#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfbench/text.hpp"

namespace cfbench {

struct ExtractionResult {
  std::string code;
  bool had_fences = false;
  std::optional<std::string> fence_info;
  bool prose_present = false;
  std::size_t block_count = 0;
  // Byte offset of `code` within the raw output.
  std::size_t code_offset = 0;
};

namespace detail {

struct Line {
  std::size_t begin;  // first byte
  std::size_t end;    // one past the last byte, excluding '\n'
};

inline std::vector<Line> line_spans(std::string_view s) {
  std::vector<Line> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < s.size()) out.push_back({start, s.size()});
      break;
    }
    out.push_back({start, nl});
    start = nl + 1;
  }
  return out;
}

inline std::size_t backtick_run(std::string_view line) {
  std::size_t n = 0;
  while (n < line.size() && line[n] == '`') ++n;
  return n;
}

struct FenceBlock {
  std::size_t open_line;
  std::size_t close_line;
  std::size_t fence_len;
  std::string info;
};

// Line-anchored backtick fences: an opening line of >= 3 backticks plus an
// optional info string free of backticks, closed by a line of at least as many
// backticks followed only by whitespace. Unclosed openings are not blocks.
inline std::vector<FenceBlock> find_fences(std::string_view raw, const std::vector<Line>& lines) {
  std::vector<FenceBlock> blocks;
  std::size_t i = 0;
  while (i < lines.size()) {
    const auto line = raw.substr(lines[i].begin, lines[i].end - lines[i].begin);
    const auto run = backtick_run(line);
    const auto rest = line.substr(run);
    if (run < 3 || rest.find('`') != std::string_view::npos) {
      ++i;
      continue;
    }
    std::optional<std::size_t> close;
    for (std::size_t j = i + 1; j < lines.size(); ++j) {
      const auto cand = raw.substr(lines[j].begin, lines[j].end - lines[j].begin);
      const auto cr = backtick_run(cand);
      if (cr >= run && text::is_blank(cand.substr(cr))) {
        close = j;
        break;
      }
    }
    if (!close) {
      ++i;
      continue;
    }
    blocks.push_back({i, *close, run, std::string(text::trim(rest))});
    i = *close + 1;
  }
  return blocks;
}

}  // namespace detail

// First fenced block wins; without a closed fence the whole output is the code.
inline ExtractionResult extract_code(std::string_view raw) {
  ExtractionResult r;
  const auto lines = detail::line_spans(raw);
  const auto blocks = detail::find_fences(raw, lines);
  if (blocks.empty()) {
    r.code = std::string(raw);
    return r;
  }
  r.had_fences = true;
  r.block_count = blocks.size();
  const auto& first = blocks.front();
  if (!first.info.empty()) r.fence_info = first.info;
  const std::size_t start = lines[first.open_line].end + 1;
  const std::size_t close_begin = lines[first.close_line].begin;
  const std::size_t stop = close_begin > start ? close_begin - 1 : start;
  r.code = std::string(raw.substr(start, stop - start));
  r.code_offset = start;

  std::vector<bool> fenced(lines.size(), false);
  for (const auto& b : blocks) {
    for (std::size_t i = b.open_line; i <= b.close_line; ++i) fenced[i] = true;
  }
  for (std::size_t i = 0; i < lines.size() && !r.prose_present; ++i) {
    if (!fenced[i]) r.prose_present = !text::is_blank(raw.substr(lines[i].begin, lines[i].end - lines[i].begin));
  }
  return r;
}

enum class Language { c, python, cpp, java, javascript, rust, go, shell, unknown };
enum class Confidence { fence_tag, heuristic, default_ };

inline std::string_view to_string(Language l) {
  switch (l) {
    case Language::c: return "c";
    case Language::python: return "python";
    case Language::cpp: return "cpp";
    case Language::java: return "java";
    case Language::javascript: return "javascript";
    case Language::rust: return "rust";
    case Language::go: return "go";
    case Language::shell: return "shell";
    case Language::unknown: return "unknown";
  }
  return "unknown";
}

inline std::string_view to_string(Confidence c) {
  switch (c) {
    case Confidence::fence_tag: return "fence_tag";
    case Confidence::heuristic: return "heuristic";
    case Confidence::default_: return "default";
  }
  return "default";
}

struct LanguageGuess {
  Language language = Language::c;
  Confidence confidence = Confidence::default_;

  friend bool operator==(const LanguageGuess&, const LanguageGuess&) = default;
};

namespace detail {

struct TagEntry {
  std::string_view tag;
  Language language;
};

constexpr std::array kFenceTags = {
    TagEntry{"c", Language::c},           TagEntry{"h", Language::c},
    TagEntry{"c89", Language::c},         TagEntry{"c99", Language::c},
    TagEntry{"c11", Language::c},         TagEntry{"c17", Language::c},
    TagEntry{"ansi-c", Language::c},      TagEntry{"cpp", Language::cpp},
    TagEntry{"c++", Language::cpp},       TagEntry{"cxx", Language::cpp},
    TagEntry{"cc", Language::cpp},        TagEntry{"hpp", Language::cpp},
    TagEntry{"python", Language::python}, TagEntry{"py", Language::python},
    TagEntry{"python3", Language::python}, TagEntry{"java", Language::java},
    TagEntry{"javascript", Language::javascript}, TagEntry{"js", Language::javascript},
    TagEntry{"node", Language::javascript}, TagEntry{"typescript", Language::javascript},
    TagEntry{"ts", Language::javascript}, TagEntry{"rust", Language::rust},
    TagEntry{"rs", Language::rust},       TagEntry{"go", Language::go},
    TagEntry{"golang", Language::go},     TagEntry{"sh", Language::shell},
    TagEntry{"bash", Language::shell},    TagEntry{"shell", Language::shell},
    TagEntry{"zsh", Language::shell},     TagEntry{"ruby", Language::unknown},
    TagEntry{"rb", Language::unknown},    TagEntry{"perl", Language::unknown},
    TagEntry{"php", Language::unknown},   TagEntry{"csharp", Language::unknown},
    TagEntry{"cs", Language::unknown},    TagEntry{"c#", Language::unknown},
    TagEntry{"kotlin", Language::unknown}, TagEntry{"swift", Language::unknown},
    TagEntry{"haskell", Language::unknown}, TagEntry{"lua", Language::unknown},
    TagEntry{"pascal", Language::unknown}, TagEntry{"fortran", Language::unknown},
    TagEntry{"asm", Language::unknown},   TagEntry{"nasm", Language::unknown},
    TagEntry{"objc", Language::unknown},  TagEntry{"objective-c", Language::unknown},
    TagEntry{"scala", Language::unknown}, TagEntry{"julia", Language::unknown},
};

inline std::optional<Language> language_from_tag(std::string_view info) {
  const auto space = info.find_first_of(" \t{");
  const std::string tag = text::to_lower(info.substr(0, space));
  for (const auto& e : kFenceTags) {
    if (e.tag == tag) return e.language;
  }
  return std::nullopt;
}

inline bool any_line_starts_with(const std::vector<std::string_view>& lines, std::string_view prefix) {
  for (auto l : lines) {
    if (text::trim_left(l).rfind(prefix, 0) == 0) return true;
  }
  return false;
}

inline bool looks_python(std::string_view code, const std::vector<std::string_view>& lines) {
  if (text::contains(code, "#include")) return false;
  for (auto raw : lines) {
    const auto l = text::trim(raw);
    if (l.rfind("def ", 0) == 0 && !l.empty() && l.back() == ':') return true;
    if (l.rfind("import ", 0) == 0 && l.back() != ';') return true;
    if (l.rfind("from ", 0) == 0 && text::contains(l, " import ")) return true;
    if (l.rfind("if __name__", 0) == 0) return true;
  }
  return false;
}

}  // namespace detail

// Fence tag first, then an ordered keyword table, then C by default.
inline LanguageGuess detect_language(const ExtractionResult& result) {
  if (result.fence_info) {
    if (auto lang = detail::language_from_tag(*result.fence_info)) return {*lang, Confidence::fence_tag};
  }
  const std::string_view code = result.code;
  const auto lines = text::split_lines(code);
  auto has = [&](std::string_view needle) { return text::contains(code, needle); };

  for (auto l : lines) {
    const auto t = text::trim(l);
    if (t.empty()) continue;
    if (t.rfind("#!", 0) == 0) {
      if (text::contains(t, "python")) return {Language::python, Confidence::heuristic};
      if (text::contains(t, "node")) return {Language::javascript, Confidence::heuristic};
      return {Language::shell, Confidence::heuristic};
    }
    break;
  }
  if (has("#include <iostream>") || has("#include <bits/stdc++.h>") || has("#include <vector>") ||
      has("std::") || has("using namespace std") || has("cout <<")) {
    return {Language::cpp, Confidence::heuristic};
  }
  if (has("public class ") || has("System.out.print") || has("public static void main")) {
    return {Language::java, Confidence::heuristic};
  }
  if (has("fn main()") || has("println!(")) return {Language::rust, Confidence::heuristic};
  if (has("package main") || has("func main()")) return {Language::go, Confidence::heuristic};
  if (has("console.log") || detail::any_line_starts_with(lines, "function ")) {
    return {Language::javascript, Confidence::heuristic};
  }
  if (detail::looks_python(code, lines)) return {Language::python, Confidence::heuristic};
  if (has("#include") || has("int main") || has("void main")) return {Language::c, Confidence::heuristic};
  return {Language::c, Confidence::default_};
}

}  // namespace cfbench
