/*
 * Copyright (c) 2026, The narrative-pipeline authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "narrative/corpus.hpp"
#include "support/temp_dir.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace narrative;
using namespace narrative::corpus;
using testing_support::TempDir;

namespace {

std::string line(const std::string& id, const std::string& text) {
    return nlohmann::json{{"id", id}, {"platform", "x"}, {"text", text}, {"lang", "de"}}.dump() + "\n";
}

Post post(const std::string& id, const std::string& text) { return {id, Platform::x, text, "de", {}, {}}; }

} // namespace

TEST(LoadPosts, ThreeJsonlRecords) {
    TempDir dir;
    write_file_atomic(dir / "p.jsonl", line("1", "a") + line("2", "b") + "\n" + line("3", "c"));
    const auto r = load_posts(dir / "p.jsonl", Format::jsonl);
    ASSERT_EQ(r.posts.size(), 3u);
    EXPECT_EQ(r.skipped, 0u);
    EXPECT_EQ(r.posts[2].text, "c");
    EXPECT_EQ(r.posts[0].platform, Platform::x);
}

TEST(LoadPosts, OneMissingTextAmongTen) {
    TempDir dir;
    std::string body;
    for (int i = 0; i < 9; ++i) body += line(std::to_string(i), "text " + std::to_string(i));
    body += R"({"id":"9","platform":"reddit","lang":"en"})" "\n";
    write_file_atomic(dir / "p.jsonl", body);
    const auto r = load_posts(dir / "p.jsonl", Format::jsonl);
    EXPECT_EQ(r.posts.size(), 9u);
    EXPECT_EQ(r.skipped, 1u);
    EXPECT_EQ(r.records, 10u);
}

TEST(LoadPosts, SkipThresholdExceeded) {
    TempDir dir;
    std::string body;
    for (int i = 0; i < 4; ++i) body += line(std::to_string(i), "ok");
    for (int i = 0; i < 6; ++i) body += "{not json\n";
    write_file_atomic(dir / "p.jsonl", body);
    EXPECT_THROW(load_posts(dir / "p.jsonl", Format::jsonl), FormatError);
}

TEST(LoadPosts, ErrorsForMissingFileAndFormat) {
    EXPECT_THROW(load_posts("/nonexistent/posts.jsonl", Format::jsonl), IoError);
    EXPECT_THROW(parse_format("xml"), InvalidArgument);
    EXPECT_EQ(parse_format("csv"), Format::csv);
}

TEST(LoadPosts, RejectsBadFieldsAndDuplicates) {
    TempDir dir;
    std::string body;
    for (int i = 0; i < 30; ++i) body += line(std::to_string(i), "fine");
    body += R"({"id":"x1","platform":"myspace","text":"t","lang":"en"})" "\n";
    body += R"({"id":"x2","platform":"x","text":"t","lang":"en","timestamp":"yesterday"})" "\n";
    body += line("0", "duplicate id");
    write_file_atomic(dir / "p.jsonl", body);
    const auto r = load_posts(dir / "p.jsonl", Format::jsonl);
    EXPECT_EQ(r.posts.size(), 30u);
    EXPECT_EQ(r.skipped, 3u);
}

TEST(LoadPosts, CsvWithQuotesAndHeader) {
    TempDir dir;
    write_file_atomic(dir / "p.csv", "id,platform,text,lang,timestamp\n"
                                     "1,telegram,\"hello, \"\"world\"\"\",de,2024-05-01T10:00:00Z\n"
                                     "2,reddit,\"multi\nline\",en,\n");
    const auto r = load_posts(dir / "p.csv", Format::csv);
    ASSERT_EQ(r.posts.size(), 2u);
    EXPECT_EQ(r.posts[0].text, "hello, \"world\"");
    EXPECT_EQ(r.posts[0].timestamp.value(), "2024-05-01T10:00:00Z");
    EXPECT_EQ(r.posts[1].text, "multi\nline");
    EXPECT_FALSE(r.posts[1].timestamp.has_value());
    write_file_atomic(dir / "bad.csv", "id,text\n1,hi\n");
    EXPECT_THROW(load_posts(dir / "bad.csv", Format::csv), FormatError);
}

TEST(LoadPosts, SerializeRoundTripBothFormats) {
    std::vector<Post> posts{{"a", Platform::x, "Ümlaut, \"quoted\"\nnext", "de", "2024-01-02T03:04:05Z", "u1"},
                            {"b", Platform::telegram, "plain", "en", {}, {}},
                            {"c", Platform::synthetic, "[[N1]] marker", "en", {}, "u9"}};
    TempDir dir;
    for (auto fmt : {Format::jsonl, Format::csv}) {
        const auto path = dir / (fmt == Format::csv ? "p.csv" : "p.jsonl");
        save_posts(path, posts, fmt);
        const auto r = load_posts(path, fmt);
        EXPECT_EQ(r.posts, posts);
        EXPECT_EQ(r.skipped, 0u);
    }
}

TEST(Dedupe, KeepsFirstAndNormalizesWhitespace) {
    auto out = dedupe(std::vector<Post>{post("1", "a"), post("2", "a")});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].id, "1");
    out = dedupe(std::vector<Post>{post("1", "a "), post("2", "a")});
    EXPECT_EQ(out.size(), 1u);
    out = dedupe(std::vector<Post>{post("1", "a  b"), post("2", "a\tb"), post("3", "A b")});
    EXPECT_EQ(out.size(), 2u);
    EXPECT_EQ(normalize_text("  x \n\t y  "), "x y");
}

TEST(Dedupe, IdempotentAndNeverGrows) {
    const auto corpus = generate_synthetic({2, 20, 0.5, 3}).posts;
    auto doubled = corpus;
    doubled.insert(doubled.end(), corpus.begin(), corpus.end());
    const auto once = dedupe(doubled);
    EXPECT_EQ(once.size(), corpus.size());
    EXPECT_EQ(dedupe(once), once);
}

TEST(Synthetic, DefaultScaleArithmetic) {
    const auto s = generate_synthetic({5, 600, 0.5, 1});
    EXPECT_EQ(s.posts.size(), 6000u);
    std::size_t planted = 0;
    for (const auto& [id, v] : s.truth) planted += v != kDistractor;
    EXPECT_EQ(planted, 3000u);
    EXPECT_EQ(s.truth.size(), s.posts.size());
    std::set<std::string> texts;
    for (const auto& p : s.posts) {
        texts.insert(p.text);
        ASSERT_TRUE(s.truth.count(p.id));
        const bool marked = p.text.find("[[N") != std::string::npos;
        EXPECT_EQ(marked, s.truth.at(p.id) != kDistractor);
    }
    EXPECT_EQ(texts.size(), s.posts.size());
}

TEST(Synthetic, EmptyDeterministicAndInvalid) {
    EXPECT_TRUE(generate_synthetic({0, 0, 0.0, 7}).posts.empty());
    const SynthSpec spec{3, 10, 0.25, 11};
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    EXPECT_EQ(a.posts, b.posts);
    EXPECT_EQ(a.truth, b.truth);
    EXPECT_EQ(a.posts.size(), 40u);
    EXPECT_NE(generate_synthetic({3, 10, 0.25, 12}).posts, a.posts);
    EXPECT_THROW(generate_synthetic({1, 1, 1.0, 1}), InvalidArgument);
}
