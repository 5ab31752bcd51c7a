#include <gtest/gtest.h>

#include <random>

#include "cfbench/extraction.hpp"
#include "test_support.hpp"

using namespace cfbench;

TEST(Extraction, FixtureCorpus) {
  const auto cases = testkit::read_jsonl(testkit::fixture("extraction.jsonl"));
  ASSERT_GE(cases.size(), 20u);
  for (const auto& c : cases) {
    SCOPED_TRACE(c["name"].get<std::string>());
    const auto r = extract_code(c["input"].get<std::string>());
    EXPECT_EQ(r.code, c["code"].get<std::string>());
    EXPECT_EQ(r.had_fences, c["had_fences"].get<bool>());
    EXPECT_EQ(r.block_count, c["block_count"].get<std::size_t>());
    if (c["fence_info"].is_null()) {
      EXPECT_FALSE(r.fence_info.has_value());
    } else {
      ASSERT_TRUE(r.fence_info.has_value());
      EXPECT_EQ(*r.fence_info, c["fence_info"].get<std::string>());
    }
  }
}

TEST(Extraction, ProsePresence) {
  EXPECT_TRUE(extract_code("Intro\n```c\nint a;\n```\n").prose_present);
  EXPECT_FALSE(extract_code("```c\nint a;\n```\n\n").prose_present);
  EXPECT_FALSE(extract_code("int a;").prose_present);
}

TEST(Extraction, CodeIsSubstringOfRaw) {
  const std::string raw = "pre\n```c\nint a;\nint b;\n```\npost";
  const auto r = extract_code(raw);
  EXPECT_EQ(raw.substr(r.code_offset, r.code.size()), r.code);
}

// Fence-free strings come back unchanged.
TEST(ExtractionProperty, RoundTripOnFenceFreeStrings) {
  std::mt19937 rng(20240611);
  const std::vector<std::string> alphabet = {"a", "Z", "0", " ", "\t", "\n", "\r\n", "{", "}", ";", "#", "`", "``",
                                             "é", "日本", "\U0001F600", "\"", "\\", "int ", "main("};
  for (int i = 0; i < 1000; ++i) {
    std::string s = testkit::random_text(rng, 120, alphabet);
    // break any run of three backticks so the string stays fence-free
    for (auto pos = s.find("```"); pos != std::string::npos; pos = s.find("```")) s.insert(pos + 2, " ");
    const auto r = extract_code(s);
    ASSERT_FALSE(r.had_fences) << s;
    ASSERT_EQ(r.code, s);
  }
}

// Wrapping any fence-free body in a fence recovers it exactly.
TEST(ExtractionProperty, WrappedBodyIsRecovered) {
  std::mt19937 rng(7);
  const std::vector<std::string> alphabet = {"x", " ", "\n", ";", "é", "{", "`"};
  for (int i = 0; i < 300; ++i) {
    std::string body = testkit::random_text(rng, 60, alphabet);
    for (auto pos = body.find("``"); pos != std::string::npos; pos = body.find("``")) body.insert(pos + 1, " ");
    const std::string raw = "prose\n```c\n" + body + "\n```\ntrailer";
    const auto r = extract_code(raw);
    ASSERT_TRUE(r.had_fences);
    ASSERT_EQ(r.code, body);
  }
}

TEST(Language, HandLabeledFixtures) {
  const auto cases = testkit::read_jsonl(testkit::fixture("language.jsonl"));
  ASSERT_EQ(cases.size(), 20u);
  for (const auto& c : cases) {
    SCOPED_TRACE(c["name"].get<std::string>());
    const auto g = detect_language(extract_code(c["input"].get<std::string>()));
    EXPECT_EQ(to_string(g.language), c["language"].get<std::string>());
    EXPECT_EQ(to_string(g.confidence), c["confidence"].get<std::string>());
  }
}

TEST(Language, FenceTagWinsOverContent) {
  const auto g = detect_language(extract_code("```c\nprint('x')\n```"));
  EXPECT_EQ(g.language, Language::c);
  EXPECT_EQ(g.confidence, Confidence::fence_tag);
}

TEST(Language, UnknownTagFallsBackToHeuristics) {
  const auto g = detect_language(extract_code("```text\n#include <stdio.h>\nint main(void){}\n```"));
  EXPECT_EQ(g.language, Language::c);
  EXPECT_EQ(g.confidence, Confidence::heuristic);
}

TEST(Language, OtherLanguagesAreUnknown) {
  EXPECT_EQ(detect_language(extract_code("```ruby\nputs 1\n```")).language, Language::unknown);
}
