#include <gtest/gtest.h>

#include "cfbench/corpus.hpp"
#include "test_support.hpp"

using namespace cfbench;

namespace {

void write_task(const std::filesystem::path& root, const std::string& id, const std::string& description,
                const std::string& c_source, const std::string& meta = "") {
  std::filesystem::create_directories(root / id / "C");
  text::write_file(root / id / "00-TASK.txt", description);
  if (!c_source.empty()) text::write_file(root / id / "C" / (id + ".c"), c_source);
  if (!meta.empty()) text::write_file(root / id / "00-META.yaml", meta);
}

const std::string kGood = "#include <stdio.h>\nint main(void) { puts(\"ok\"); return 0; }\n";
const std::string kBroken = "int main(void) { return 0 }\n";

}  // namespace

TEST(Corpus, LoadsRosettaStyleTree) {
  const testkit::TempDir dir;
  const auto root = dir / "Task";
  write_task(root, "Hello-world_Text", "Display the string hello world.", kGood, "---\ncategory:\n- Basic language learning\n- Simple\n");
  write_task(root, "Abc", "Count.", kGood);
  std::filesystem::create_directories(root / "No_C" / "Python");
  text::write_file(root / "No_C" / "Python" / "x.py", "print(1)\n");

  const auto r = load_corpus(dir.path());
  ASSERT_EQ(r.corpus.size(), 2u);
  EXPECT_EQ(r.corpus.tasks[0].id, "Abc");
  EXPECT_EQ(r.corpus.tasks[0].category, "Uncategorized");
  const Task* hello = r.corpus.find("Hello-world_Text");
  ASSERT_NE(hello, nullptr);
  EXPECT_EQ(hello->name, "Hello world Text");
  EXPECT_EQ(hello->category, "Basic language learning");
  EXPECT_EQ(hello->description, "Display the string hello world.");
  EXPECT_EQ(hello->description_tokens, 5u);
  ASSERT_EQ(r.skipped.size(), 1u);
  EXPECT_EQ(r.skipped[0].id, "No_C");
  EXPECT_EQ(r.skipped[0].reason, "no_c_solution");
}

TEST(Corpus, JsonlRoundTrip) {
  const testkit::TempDir dir;
  TaskCorpus c;
  c.tasks.push_back(make_task("b", "B", "desc b", "Cat", kGood));
  c.tasks.push_back(make_task("a", "A", "desc a\nline", "Cat", kGood));
  std::sort(c.tasks.begin(), c.tasks.end(), [](auto& x, auto& y) { return x.id < y.id; });
  text::write_file(dir / "tasks.jsonl", serialize_corpus(c));
  const auto r = load_corpus(dir / "tasks.jsonl");
  EXPECT_EQ(serialize_corpus(r.corpus), serialize_corpus(c));
  EXPECT_EQ(r.corpus.tasks[1].solution_tokens, token_count(kGood));
}

TEST(Corpus, MalformedRecordsAreReportedWithLineNumbers) {
  const testkit::TempDir dir;
  text::write_file(dir / "t.jsonl",
                   "{\"id\":\"a\",\"name\":\"A\",\"description\":\"d\",\"category\":\"c\",\"ground_truth\":\"int x;\"}\n"
                   "not json\n"
                   "{\"id\":\"b\",\"name\":\"B\",\"description\":\"d\",\"category\":\"c\",\"ground_truth\":\"\"}\n");
  const auto r = load_corpus(dir / "t.jsonl");
  EXPECT_EQ(r.corpus.size(), 1u);
  ASSERT_EQ(r.skipped.size(), 2u);
  EXPECT_EQ(r.skipped[0].reason, "malformed");
  EXPECT_TRUE(text::contains(r.skipped[0].detail, "record 2"));
  EXPECT_EQ(r.skipped[1].reason, "no_c_solution");
}

TEST(Corpus, MostlyMalformedIsDataError) {
  const testkit::TempDir dir;
  text::write_file(dir / "t.jsonl", "x\ny\n{\"id\":\"a\",\"name\":\"A\",\"description\":\"d\",\"category\":\"c\",\"ground_truth\":\"int x;\"}\n");
  try {
    load_corpus(dir / "t.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(Corpus, DuplicateIdsAreDataError) {
  const testkit::TempDir dir;
  const std::string rec = "{\"id\":\"a\",\"name\":\"A\",\"description\":\"d\",\"category\":\"c\",\"ground_truth\":\"int x;\"}\n";
  text::write_file(dir / "t.jsonl", rec + rec);
  EXPECT_THROW(load_corpus(dir / "t.jsonl"), Error);
}

TEST(Corpus, MissingPathIsDataError) { EXPECT_THROW(load_corpus("/nonexistent/corpus"), Error); }

TEST(Corpus, FilterKeepsOnlyCompilingGroundTruth) {
  TaskCorpus c;
  c.tasks = {make_task("a", "A", "d", "x", kGood), make_task("b", "B", "d", "x", kBroken),
             make_task("c", "C", "d", "x", kGood)};
  const auto r = filter_compilable(c, {}, 2);
  ASSERT_EQ(r.corpus.size(), 2u);
  EXPECT_EQ(r.corpus.tasks[0].id, "a");
  EXPECT_EQ(r.corpus.tasks[1].id, "c");
  ASSERT_EQ(r.rejected.size(), 1u);
  EXPECT_EQ(r.rejected[0].id, "b");
  EXPECT_EQ(r.rejected[0].reason, "compile_failed");
  EXPECT_TRUE(text::contains(r.rejected[0].detail, "error"));
}

// Filtered output is a subset of the input, and filtering again changes nothing.
TEST(CorpusProperty, FilterIsIdempotentSubset) {
  TaskCorpus c;
  for (int i = 0; i < 6; ++i) {
    c.tasks.push_back(make_task("t" + std::to_string(i), "T", "d", "x", i % 3 == 0 ? kBroken : kGood));
  }
  const auto once = filter_compilable(c, {}, 3);
  for (const auto& t : once.corpus.tasks) EXPECT_NE(c.find(t.id), nullptr);
  EXPECT_EQ(once.corpus.size() + once.rejected.size(), c.size());
  const auto twice = filter_compilable(once.corpus, {}, 3);
  EXPECT_EQ(serialize_corpus(twice.corpus), serialize_corpus(once.corpus));
  EXPECT_TRUE(twice.rejected.empty());
}

TEST(Corpus, OversizeGroundTruthIsRejectedNotFatal) {
  TaskCorpus c;
  c.tasks = {make_task("big", "B", "d", "x", std::string(64, ' ') + kGood), make_task("ok", "O", "d", "x", kGood)};
  CompilerConfig cc;
  cc.max_source_bytes = 70;
  const auto r = filter_compilable(c, cc, 1);
  ASSERT_EQ(r.corpus.size(), 1u);
  ASSERT_EQ(r.rejected.size(), 1u);
  EXPECT_EQ(r.rejected[0].reason, "too_large");
}

TEST(Corpus, FilterNeedsACompiler) {
  TaskCorpus c;
  c.tasks = {make_task("a", "A", "d", "x", kGood)};
  CompilerConfig cc;
  cc.compiler_path = "no-such-cc-xyz";
  try {
    filter_compilable(c, cc, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::environment);
  }
}
