#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cfbench/taxonomy.hpp"
#include "test_support.hpp"

using namespace cfbench;

namespace {

IterationRecord failed_iteration(const std::string& raw) {
  IterationRecord it;
  it.raw_output = raw;
  it.extraction = extract_code(raw);
  it.compile = compile(it.extraction.code, {});
  return it;
}

TaskRunLog outcome(const std::string& task, const std::string& model, RunMode mode, bool ok) {
  TaskRunLog l;
  l.task_id = task;
  l.model_name = model;
  l.mode = mode;
  l.succeeded = ok;
  return l;
}

}  // namespace

TEST(Taxonomy, HandLabeledCorpus) {
  const auto rows = testkit::read_jsonl(testkit::fixture("taxonomy_corpus.jsonl"));
  ASSERT_EQ(rows.size(), 30u);
  std::map<ErrorCategory, int> counts;
  for (const auto& r : rows) {
    SCOPED_TRACE(r["id"].get<std::string>());
    const auto it = failed_iteration(r["raw_output"].get<std::string>());
    ASSERT_FALSE(it.compile.success);
    const auto c = classify_failure(it);
    EXPECT_EQ(to_string(c.category), r["label"].get<std::string>()) << it.compile.stderr_raw;
    ++counts[c.category];
  }
  int total = 0;
  for (const auto& [k, n] : counts) total += n;
  EXPECT_EQ(total, 30);
}

TEST(Taxonomy, RejectsSuccessfulIterations) {
  auto it = failed_iteration("int main(void){return 0;}");
  ASSERT_TRUE(it.compile.success);
  EXPECT_THROW(classify_failure(it), Error);
}

TEST(Taxonomy, NamesRoundTrip) {
  for (auto c : kAllCategories) EXPECT_EQ(category_from_string(to_string(c)), c);
  EXPECT_FALSE(category_from_string("Other"));
}

TEST(Taxonomy, VotesFollowDiagnostics) {
  IterationRecord it;
  it.extraction = extract_code("```c\nint main(void) { f(); }\n```");
  it.compile.success = false;
  it.compile.stderr_raw =
      "/usr/bin/ld: /tmp/cc1.o: in function `main':\nmain.c:(.text+0x9): undefined reference to `f'\n"
      "collect2: error: ld returned 1 exit status\n";
  it.compile.diagnostics = parse_diagnostics(it.compile.stderr_raw);
  const auto c = classify_failure(it);
  EXPECT_EQ(c.category, ErrorCategory::UndefinedReference);
  EXPECT_EQ(c.votes_undef, 1);
  EXPECT_EQ(c.votes_link, 0);
  EXPECT_EQ(c.votes_syntax, 0);
}

TEST(Taxonomy, ZeroVotesFallBackToSyntax) {
  IterationRecord it;
  it.extraction = extract_code("```c\nint main(void) { return 0; }\n```");
  it.compile.success = false;
  it.compile.timed_out = true;
  EXPECT_EQ(classify_failure(it).category, ErrorCategory::SyntaxError);
}

// Any failing output gets exactly one category from the fixed set.
TEST(TaxonomyProperty, TotalOverRandomFailures) {
  std::mt19937 rng(23);
  const std::vector<std::string> alphabet = {"int ", "main", "(", ")", "{", "}", ";", "\n", "```", "c\n", "the ",
                                             "program ", "prints ", "#include <stdio.h>\n", "def f():\n", "x = 1\n"};
  for (int i = 0; i < 40; ++i) {
    const auto raw = testkit::random_text(rng, 20, alphabet);
    IterationRecord it;
    it.raw_output = raw;
    it.extraction = extract_code(raw);
    it.compile.success = false;
    it.compile.stderr_raw = "main.c:1:1: error: expected identifier\n";
    it.compile.diagnostics = parse_diagnostics(it.compile.stderr_raw);
    Classification c;
    ASSERT_NO_THROW(c = classify_failure(it)) << raw;
    EXPECT_TRUE(category_from_string(to_string(c.category)).has_value());
  }
}

TEST(Buckets, DeltaAndThresholds) {
  std::vector<TaskRunLog> agents, bases;
  for (int m = 0; m < 16; ++m) {
    const auto name = "m" + std::to_string(m);
    agents.push_back(outcome("Prime decomposition", name, RunMode::agent, m < 13));
    bases.push_back(outcome("Prime decomposition", name, RunMode::baseline, m < 4));
  }
  const auto r = bucket_improvement("Prime decomposition", agents, bases);
  EXPECT_EQ(r.agents_solved, 13);
  EXPECT_EQ(r.baselines_solved, 4);
  EXPECT_EQ(r.delta, 9);
  EXPECT_EQ(r.bucket, ImprovementBucket::SignificantImprovement);
  EXPECT_EQ(bucket_for_delta(0, {}), ImprovementBucket::NoImprovement);
  EXPECT_EQ(bucket_for_delta(-3, {}), ImprovementBucket::NoImprovement);
  EXPECT_EQ(bucket_for_delta(1, {}), ImprovementBucket::SlightImprovement);
  EXPECT_EQ(bucket_for_delta(3, {}), ImprovementBucket::SlightImprovement);
  EXPECT_EQ(bucket_for_delta(4, {}), ImprovementBucket::SignificantImprovement);
}

TEST(Buckets, MismatchedModelSetsAreRejected) {
  std::vector<TaskRunLog> a = {outcome("t", "m1", RunMode::agent, true)};
  std::vector<TaskRunLog> b = {outcome("t", "m2", RunMode::baseline, true)};
  EXPECT_THROW(bucket_improvement("t", a, b), Error);
}

// Swapping the roles negates the delta.
TEST(BucketProperty, Antisymmetric) {
  std::mt19937 rng(31);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TaskRunLog> a, b;
    for (int m = 0; m < 8; ++m) {
      a.push_back(outcome("t", "m" + std::to_string(m), RunMode::agent, coin(rng)));
      b.push_back(outcome("t", "m" + std::to_string(m), RunMode::baseline, coin(rng)));
    }
    EXPECT_EQ(bucket_improvement("t", a, b).delta, -bucket_improvement("t", b, a).delta);
  }
}

TEST(Reduction, PublishedTotals) {
  std::vector<ErrorCategory> base(948, ErrorCategory::SyntaxError), agent(334, ErrorCategory::SyntaxError);
  const auto t = category_reduction(base, agent);
  ASSERT_TRUE(t.overall.reduction);
  EXPECT_EQ(std::round(*t.overall.reduction * 1000) / 1000, 0.648);
  const auto syntax = make_reduction(200, 49);
  EXPECT_DOUBLE_EQ(*syntax.reduction, 0.755);
  EXPECT_FALSE(make_reduction(0, 3).reduction.has_value());
  EXPECT_FALSE(t.per_category.at(ErrorCategory::LinkingError).reduction.has_value());
}
