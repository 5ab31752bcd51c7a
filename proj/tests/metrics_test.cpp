#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cfbench/metrics.hpp"
#include "test_support.hpp"

using namespace cfbench;
using namespace cfbench::metrics;

namespace {

TaskRunLog agent_log(const std::string& id, std::optional<int> success_at, int attempts) {
  TaskRunLog l;
  l.task_id = id;
  l.model_name = "m";
  l.mode = RunMode::agent;
  for (int k = 1; k <= attempts; ++k) {
    IterationRecord it;
    it.index = k;
    it.extraction.code = "int v" + std::to_string(k) + ";\nint shared;\n";
    l.iterations.push_back(it);
  }
  l.succeeded = success_at.has_value();
  l.success_iteration = success_at;
  return l;
}

}  // namespace

TEST(Tokenizer, SplitsWordsAndPunctuation) {
  const auto t = tokenize_code("int main(void){return a_b+1;}");
  const Tokens expect = {"int", "main", "(", "void", ")", "{", "return", "a_b", "+", "1", ";", "}"};
  EXPECT_EQ(t, expect);
  EXPECT_EQ(tokenize_code("é x").size(), 2u);
}

TEST(Bleu, IdentityIsOne) {
  for (const std::string s : {"a", "a b", "a b c", "int main(void) { return 0; }"}) {
    const auto t = tokenize_code(s);
    EXPECT_EQ(bleu(t, t), 1.0) << s;
    EXPECT_EQ(rouge1(t, t).recall, 1.0) << s;
  }
}

TEST(Bleu, HandComputedFixture) {
  const auto cand = tokenize_code("the cat sat on the mat");
  const auto ref = tokenize_code("the cat is on the mat");
  // clipped n-gram precisions counted by hand; the empty 4-gram match takes epsilon
  const double logs = std::log(5.0 / 6.0) + std::log(3.0 / 5.0) + std::log(1.0 / 4.0) + std::log(1e-9 / 3.0);
  const double expected = std::exp(logs / 4.0);
  EXPECT_NEAR(bleu(cand, ref), expected, 1e-9);
}

TEST(Bleu, BrevityPenaltyAndEdges) {
  const auto ref = tokenize_code("a b c d e f g h");
  const auto cand = tokenize_code("a b c d");
  // all four n-gram orders match fully; only the brevity penalty applies
  EXPECT_NEAR(bleu(cand, ref), std::exp(1.0 - 8.0 / 4.0), 1e-12);
  EXPECT_EQ(bleu({}, ref), 0.0);
  EXPECT_THROW(bleu(ref, {}), Error);
}

TEST(Rouge1, HandCountFixture) {
  const auto r = rouge1(tokenize_code("a b b c"), tokenize_code("a b d"));
  EXPECT_EQ(r.recall, 2.0 / 3.0);
  EXPECT_EQ(r.precision, 2.0 / 4.0);
}

TEST(Pearson, ExactLinear) {
  const std::vector<double> x = {1, 2, 3};
  const std::vector<double> y = {2, 4, 6};
  EXPECT_EQ(pearson(x, y), 1.0);
}

TEST(Pearson, MatchesScipyOnFiftyPoints) {
  const auto j = testkit::read_json(testkit::fixture("pearson50.json"));
  const auto x = j["x"].get<std::vector<double>>();
  const auto y = j["y"].get<std::vector<double>>();
  EXPECT_NEAR(pearson(x, y), j["r"].get<double>(), 1e-12);
}

TEST(PearsonProperty, AffineInvariance) {
  std::mt19937 rng(3);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> coef(0.1, 10);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(20), y(20);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = n(rng);
      y[i] = 0.5 * x[i] + n(rng);
    }
    const double r = pearson(x, y);
    const double a = coef(rng), b = n(rng) * 5, c = coef(rng), d = n(rng) * 5;
    std::vector<double> x2(x.size()), y2(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      x2[i] = a * x[i] + b;
      y2[i] = c * y[i] + d;
    }
    EXPECT_NEAR(pearson(x2, y2), r, 1e-12);
    for (auto& v : x2) v = -v;
    EXPECT_NEAR(pearson(x2, y2), -r, 1e-12);
  }
}

TEST(Pearson, Preconditions) {
  const std::vector<double> one = {1};
  const std::vector<double> two = {1, 2};
  const std::vector<double> flat = {3, 3};
  try {
    pearson(one, one);
    FAIL();
  } catch (const PearsonError& e) {
    EXPECT_EQ(e.failure(), PearsonFailure::too_few_points);
  }
  try {
    pearson(two, flat);
    FAIL();
  } catch (const PearsonError& e) {
    EXPECT_EQ(e.failure(), PearsonFailure::zero_variance);
  }
  try {
    pearson(one, two);
    FAIL();
  } catch (const PearsonError& e) {
    EXPECT_EQ(e.failure(), PearsonFailure::length_mismatch);
  }
}

TEST(RowsChanged, MatchesFrozenDiffCounts) {
  const auto dir = testkit::fixture("diff");
  const auto expected = testkit::read_json(dir / "expected.json")["rows_changed"];
  ASSERT_EQ(expected.size(), 10u);
  for (const auto& [id, count] : expected.items()) {
    const auto a = text::read_file(dir / (id + "_a.c"));
    const auto b = text::read_file(dir / (id + "_b.c"));
    EXPECT_EQ(rows_changed(a, b), count.get<std::size_t>()) << id;
  }
}

TEST(RowsChangedProperty, SymmetricWithIdentityAndTriangle) {
  std::mt19937 rng(5);
  const std::vector<std::string> lines = {"a", "b", "c", "int x;", "}", "", "  a", "a  "};
  auto make = [&] {
    std::uniform_int_distribution<int> len(0, 12);
    std::uniform_int_distribution<std::size_t> pick(0, lines.size() - 1);
    std::string s;
    for (int i = len(rng); i > 0; --i) s += lines[pick(rng)] + "\n";
    return s;
  };
  for (int i = 0; i < 100; ++i) {
    const auto a = make(), b = make(), c = make();
    EXPECT_EQ(rows_changed(a, a), 0u);
    EXPECT_EQ(rows_changed(a, b), rows_changed(b, a));
    EXPECT_LE(rows_changed(a, c), rows_changed(a, b) + rows_changed(b, c));
  }
}

TEST(SuccessRate, GroupChecks) {
  std::vector<TaskRunLog> logs = {agent_log("a", 1, 1), agent_log("b", std::nullopt, 5)};
  EXPECT_EQ(success_rate(logs), 0.5);
  EXPECT_THROW(success_rate(std::vector<TaskRunLog>{}), Error);
  logs[1].model_name = "other";
  EXPECT_THROW(success_rate(logs), Error);
}

// The histogram total is the success count, for any mix of outcomes.
TEST(HistogramProperty, TotalEqualsSuccesses) {
  std::mt19937 rng(17);
  std::uniform_int_distribution<int> at(0, 5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TaskRunLog> logs;
    for (int i = 0; i < 40; ++i) {
      const int k = at(rng);
      logs.push_back(k == 0 ? agent_log(std::to_string(i), std::nullopt, 5) : agent_log(std::to_string(i), k, k));
    }
    const auto h = iteration_histogram(logs);
    EXPECT_EQ(h.total(), success_count(logs));
    EXPECT_DOUBLE_EQ(static_cast<double>(h.total()) / static_cast<double>(logs.size()), success_rate(logs));
  }
}

TEST(Histogram, RejectsBaselineLogs) {
  auto l = agent_log("a", 1, 1);
  l.mode = RunMode::baseline;
  EXPECT_THROW(iteration_histogram(std::vector<TaskRunLog>{l}), Error);
}

TEST(Transitions, CountsRunsThatReachedTheNextIteration) {
  const std::vector<TaskRunLog> logs = {agent_log("a", 1, 1), agent_log("b", 3, 3), agent_log("c", std::nullopt, 5)};
  const auto ts = transition_stats(logs);
  ASSERT_EQ(ts.size(), 4u);
  EXPECT_EQ(ts[0].pairs, 2u);
  EXPECT_EQ(ts[1].pairs, 2u);
  EXPECT_EQ(ts[2].pairs, 1u);
  EXPECT_EQ(ts[3].pairs, 1u);
  EXPECT_DOUBLE_EQ(ts[0].rows_changed, 2.0);
  EXPECT_GT(ts[0].bleu, 0.0);
  EXPECT_LT(ts[0].bleu, 1.0);
}
