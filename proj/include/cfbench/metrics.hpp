#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cfbench/agent_loop.hpp"
#include "cfbench/error.hpp"
#include "cfbench/text.hpp"

namespace cfbench::metrics {

using Tokens = std::vector<std::string>;

// Lexer-like split for similarity scoring: maximal [A-Za-z0-9_] runs are one
// token, every other non-whitespace code point is a token of its own.
inline Tokens tokenize_code(std::string_view s) {
  Tokens out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    if (text::is_word_char(s[pos])) {
      const std::size_t start = pos;
      while (pos < s.size() && text::is_word_char(s[pos])) ++pos;
      out.emplace_back(s.substr(start, pos - start));
      continue;
    }
    const std::size_t start = pos;
    const char32_t cp = text::decode_utf8(s, pos);
    if (!text::is_unicode_space(cp)) out.emplace_back(s.substr(start, pos - start));
  }
  return out;
}

inline constexpr int kBleuMaxOrder = 4;
inline constexpr double kBleuEpsilon = 1e-9;

namespace detail {

inline std::unordered_map<std::string, int> ngram_counts(std::span<const std::string> tokens, int n) {
  std::unordered_map<std::string, int> counts;
  if (tokens.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) {
      if (k) key += '\x1f';
      key += tokens[i + static_cast<std::size_t>(k)];
    }
    ++counts[key];
  }
  return counts;
}

inline int clipped_overlap(const std::unordered_map<std::string, int>& cand,
                           const std::unordered_map<std::string, int>& ref) {
  int overlap = 0;
  for (const auto& [gram, c] : cand) {
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(c, it->second);
  }
  return overlap;
}

}  // namespace detail

// Sentence BLEU over orders 1..min(4, |candidate|) with uniform weights,
// brevity penalty, and epsilon added to zero match counts.
inline double bleu(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (reference.empty()) throw precondition_error("bleu: reference must be non-empty");
  if (candidate.empty()) return 0.0;
  const int order = std::min<int>(kBleuMaxOrder, static_cast<int>(candidate.size()));
  double log_sum = 0.0;
  for (int n = 1; n <= order; ++n) {
    const auto cand = detail::ngram_counts(candidate, n);
    const auto ref = detail::ngram_counts(reference, n);
    const double total = static_cast<double>(candidate.size() - static_cast<std::size_t>(n) + 1);
    const int matches = detail::clipped_overlap(cand, ref);
    const double numerator = matches == 0 ? kBleuEpsilon : static_cast<double>(matches);
    log_sum += std::log(numerator / total) / order;
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double brevity = c > r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(brevity * std::exp(log_sum), 0.0, 1.0);
}

struct RougeScore {
  double recall = 0;
  double precision = 0;
  double f1 = 0;
};

// Clipped unigram overlap.
inline RougeScore rouge1(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (reference.empty()) throw precondition_error("rouge1: reference must be non-empty");
  const int overlap = detail::clipped_overlap(detail::ngram_counts(candidate, 1), detail::ngram_counts(reference, 1));
  RougeScore s;
  s.recall = static_cast<double>(overlap) / static_cast<double>(reference.size());
  s.precision = candidate.empty() ? 0.0 : static_cast<double>(overlap) / static_cast<double>(candidate.size());
  s.f1 = (s.recall + s.precision) == 0.0 ? 0.0 : 2.0 * s.recall * s.precision / (s.recall + s.precision);
  return s;
}

struct SimilarityScore {
  double bleu = 0;
  double rouge1_recall = 0;
  double rouge1_precision = 0;
  double rouge1_f1 = 0;
};

inline SimilarityScore similarity(std::string_view candidate, std::string_view reference) {
  const auto c = tokenize_code(candidate);
  const auto r = tokenize_code(reference);
  const auto rg = rouge1(c, r);
  return {bleu(c, r), rg.recall, rg.precision, rg.f1};
}

// Insertions + deletions of a minimal line edit script (n + m - 2 * LCS),
// comparing lines with trailing whitespace removed.
inline std::size_t rows_changed(std::string_view prev, std::string_view next) {
  std::unordered_map<std::string_view, int> ids;
  auto encode = [&](std::string_view s) {
    std::vector<int> out;
    for (auto line : text::split_lines(s)) {
      auto [it, inserted] = ids.try_emplace(text::trim_right(line), static_cast<int>(ids.size()));
      out.push_back(it->second);
    }
    return out;
  };
  const auto a = encode(prev);
  const auto b = encode(next);
  std::vector<std::size_t> row(b.size() + 1, 0);
  std::vector<std::size_t> prev_row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      row[j] = a[i - 1] == b[j - 1] ? prev_row[j - 1] + 1 : std::max(prev_row[j], row[j - 1]);
    }
    std::swap(row, prev_row);
  }
  const std::size_t lcs = prev_row[b.size()];
  return a.size() + b.size() - 2 * lcs;
}

enum class PearsonFailure { length_mismatch, too_few_points, zero_variance };

class PearsonError : public Error {
 public:
  PearsonError(PearsonFailure f, const std::string& what) : Error(ErrorKind::precondition, what), failure_(f) {}
  PearsonFailure failure() const noexcept { return failure_; }

 private:
  PearsonFailure failure_;
};

// Sample Pearson correlation coefficient.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw PearsonError(PearsonFailure::length_mismatch, "pearson: length mismatch");
  if (xs.size() < 2) throw PearsonError(PearsonFailure::too_few_points, "pearson: need at least two points");
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<long double>(xs.size());
  my /= static_cast<long double>(ys.size());
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const long double dx = xs[i] - mx;
    const long double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw PearsonError(PearsonFailure::zero_variance, "pearson: zero variance");
  const long double r = sxy / std::sqrt(sxx * syy);
  return static_cast<double>(std::clamp<long double>(r, -1.0L, 1.0L));
}

namespace detail {

inline void require_single_group(std::span<const TaskRunLog> logs, const char* op) {
  if (logs.empty()) throw precondition_error(std::string(op) + ": no logs");
  for (const auto& l : logs) {
    if (l.model_name != logs.front().model_name || l.mode != logs.front().mode) {
      throw precondition_error(std::string(op) + ": logs mix (model, mode) groups");
    }
  }
}

}  // namespace detail

inline std::size_t success_count(std::span<const TaskRunLog> logs) {
  return static_cast<std::size_t>(std::count_if(logs.begin(), logs.end(), [](const auto& l) { return l.succeeded; }));
}

inline double success_rate(std::span<const TaskRunLog> logs) {
  detail::require_single_group(logs, "success_rate");
  return static_cast<double>(success_count(logs)) / static_cast<double>(logs.size());
}

// counts[k-1] = number of runs whose first success came at iteration k.
struct IterationHistogram {
  std::vector<std::size_t> counts = std::vector<std::size_t>(5, 0);

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
};

inline IterationHistogram iteration_histogram(std::span<const TaskRunLog> logs) {
  IterationHistogram h;
  for (const auto& l : logs) {
    if (l.mode != RunMode::agent) throw precondition_error("iteration_histogram: baseline log " + l.task_id);
    if (!l.success_iteration) continue;
    const auto k = static_cast<std::size_t>(*l.success_iteration);
    if (k < 1) throw data_error("iteration_histogram: success_iteration < 1 in " + l.task_id);
    if (k > h.counts.size()) h.counts.resize(k, 0);
    ++h.counts[k - 1];
  }
  return h;
}

// Similarity between consecutive extracted programs for one step k -> k+1.
struct TransitionStats {
  int from = 1;
  std::size_t pairs = 0;             // runs that reached iteration k+1
  std::size_t scored_pairs = 0;      // pairs whose earlier program had tokens
  double bleu = 0;
  double rouge1_recall = 0;
  double rows_changed = 0;
};

// The earlier program is the reference. Pairs whose earlier program has no
// tokens count toward rows changed but not toward BLEU/ROUGE.
inline std::vector<TransitionStats> transition_stats(std::span<const TaskRunLog> logs, int max_iterations = 5) {
  std::vector<TransitionStats> out;
  for (int k = 1; k < max_iterations; ++k) {
    TransitionStats s;
    s.from = k;
    double bleu_sum = 0, rouge_sum = 0, rows_sum = 0;
    for (const auto& l : logs) {
      if (l.iterations.size() <= static_cast<std::size_t>(k)) continue;
      const auto& prev = l.iterations[static_cast<std::size_t>(k) - 1].extraction.code;
      const auto& next = l.iterations[static_cast<std::size_t>(k)].extraction.code;
      ++s.pairs;
      rows_sum += static_cast<double>(rows_changed(prev, next));
      const auto ref = tokenize_code(prev);
      if (ref.empty()) continue;
      const auto cand = tokenize_code(next);
      ++s.scored_pairs;
      bleu_sum += bleu(cand, ref);
      rouge_sum += rouge1(cand, ref).recall;
    }
    if (s.pairs) s.rows_changed = rows_sum / static_cast<double>(s.pairs);
    if (s.scored_pairs) {
      s.bleu = bleu_sum / static_cast<double>(s.scored_pairs);
      s.rouge1_recall = rouge_sum / static_cast<double>(s.scored_pairs);
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace cfbench::metrics
