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

#include "narrative/embed_stage.hpp"
#include "narrative/mock_provider.hpp"
#include "support/temp_dir.hpp"

#include <gtest/gtest.h>

using namespace narrative;
using namespace narrative::embed;
using corpus::Platform;
using corpus::Post;
using testing_support::TempDir;

namespace {

llm::EndpointConfig config() {
    llm::EndpointConfig cfg;
    cfg.embed_model_id = "embed";
    cfg.api_key_env = "";
    return cfg;
}

std::vector<Post> posts(std::size_t n) {
    std::vector<Post> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({"id" + std::to_string(i), Platform::x, "[[N" + std::to_string(i % 3) + "]] t" + std::to_string(i),
                       "en", {}, {}});
    }
    return out;
}

double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

/// Returns raw, non-unit vectors so local normalization is observable.
class ScaledTransport final : public llm::Transport {
public:
    llm::HttpResponse post(const std::string& path, const std::string& body) override {
        auto r = mock_.post(path, body);
        auto j = nlohmann::json::parse(r.body);
        for (auto& item : j["data"]) {
            for (auto& x : item["embedding"]) x = x.get<double>() * 7.5;
        }
        return {200, j.dump(), {}};
    }

private:
    llm::MockProvider mock_;
};

} // namespace

TEST(Instruction, ExactDefaultText) {
    EXPECT_EQ(kDefaultInstruction, "Identify the strategic narrative, manipulative intent, and underlying "
                                   "disinformation motive in the following text: ");
}

TEST(L2Normalize, Values) {
    const auto v = l2_normalize(std::vector<double>{3, 4});
    EXPECT_DOUBLE_EQ(v[0], 0.6);
    EXPECT_DOUBLE_EQ(v[1], 0.8);
    EXPECT_EQ(l2_normalize(v), v);
    EXPECT_THROW(l2_normalize(std::vector<double>{0, 0}), InvalidArgument);
    EXPECT_THROW(l2_normalize(std::vector<double>{1, NAN}), InvalidArgument);
    EXPECT_THROW(l2_normalize(std::vector<double>{}), InvalidArgument);
}

TEST(CosineDistance, Values) {
    const std::vector<double> a{1, 0}, b{0, 1}, c{-1, 0};
    EXPECT_DOUBLE_EQ(cosine_distance(a, a), 0.0);
    EXPECT_DOUBLE_EQ(cosine_distance(a, b), 1.0);
    EXPECT_DOUBLE_EQ(cosine_distance(a, c), 2.0);
    EXPECT_DOUBLE_EQ(cosine_distance(a, b), cosine_distance(b, a));
    EXPECT_THROW(cosine_distance(a, std::vector<double>{1, 0, 0}), InvalidArgument);
}

TEST(VectorFile, BitExactRoundTrip) {
    VectorFile f;
    f.dim = 3;
    f.ids = {"a", "ü-id", ""};
    f.values = {0.1f, -0.2f, 0.3f, 1e-30f, 2.5f, -0.0f, 7.f, 8.f, 9.f};
    const auto back = decode_vectors(encode_vectors(f));
    EXPECT_EQ(back.ids, f.ids);
    EXPECT_EQ(std::memcmp(back.values.data(), f.values.data(), f.values.size() * sizeof(float)), 0);
    auto bytes = encode_vectors(f);
    EXPECT_EQ(bytes.substr(0, 8), "NARREMB1");
    EXPECT_THROW(decode_vectors(bytes.substr(0, bytes.size() - 1)), FormatError);
    bytes[0] = 'X';
    EXPECT_THROW(decode_vectors(bytes), FormatError);
}

TEST(EmbedPosts, UnitNormOrderAndCacheHits) {
    TempDir dir;
    const auto ps = posts(20);
    std::vector<EmbeddingVector> first;
    {
        llm::Gateway gw(config(), std::make_shared<ScaledTransport>());
        EmbeddingCache cache(dir / "cache.bin");
        EmbedStats stats;
        first = embed_posts(gw, ps, kDefaultInstruction, cache, &stats);
        EXPECT_EQ(stats.fetched, 20u);
        EXPECT_GT(gw.wire_calls(), 0u);
    }
    ASSERT_EQ(first.size(), 20u);
    for (std::size_t i = 0; i < first.size(); ++i) {
        EXPECT_EQ(first[i].post_id, ps[i].id);
        EXPECT_NEAR(norm(first[i].values), 1.0, 1e-6);
    }
    llm::Gateway gw(config(), std::make_shared<ScaledTransport>());
    EmbeddingCache cache(dir / "cache.bin");
    EmbedStats stats;
    const auto second = embed_posts(gw, ps, kDefaultInstruction, cache, &stats);
    EXPECT_EQ(gw.wire_calls(), 0u);
    EXPECT_EQ(stats.cache_hits, 20u);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(second[i].values, first[i].values);

    std::string changed(kDefaultInstruction);
    changed.back() = ';';
    const auto third = embed_posts(gw, ps, changed, cache, &stats);
    EXPECT_EQ(stats.fetched, 20u);
    EXPECT_EQ(stats.cache_hits, 0u);
}

TEST(EmbedPosts, CorruptCacheIsRebuilt) {
    TempDir dir;
    write_file_atomic(dir / "cache.bin", "garbage");
    EmbeddingCache cache(dir / "cache.bin");
    EXPECT_TRUE(cache.rebuilt());
    EXPECT_EQ(cache.size(), 0u);
    llm::Gateway gw(config(), std::make_shared<llm::MockProvider>());
    const auto v = embed_posts(gw, posts(3), kDefaultInstruction, cache);
    EXPECT_EQ(v.size(), 3u);
    EmbeddingCache reloaded(dir / "cache.bin");
    EXPECT_FALSE(reloaded.rebuilt());
    EXPECT_EQ(reloaded.size(), 3u);
}

TEST(EmbedPosts, InstructionReachesTheWire) {
    auto mock = std::make_shared<llm::MockProvider>();
    llm::Gateway gw(config(), mock);
    EmbeddingCache cache;
    const auto ps = posts(1);
    const auto v = embed_posts(gw, ps, kDefaultInstruction, cache);
    const auto expected = mock->embed_one(
        llm::apply_instruction(config().instruction_template, kDefaultInstruction, ps[0].text));
    for (std::size_t d = 0; d < expected.size(); ++d) EXPECT_NEAR(v[0].values[d], expected[d], 1e-6);
}

TEST(RunEmbeddings, SaveLoadWithManifest) {
    TempDir dir;
    llm::Gateway gw(config(), std::make_shared<llm::MockProvider>());
    EmbeddingCache cache;
    const auto v = embed_posts(gw, posts(5), kDefaultInstruction, cache);
    save_run_embeddings(dir / "embeddings.bin", v, "embed", kDefaultInstruction);
    const auto back = load_run_embeddings(dir / "embeddings.bin");
    ASSERT_EQ(back.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(back[i].post_id, v[i].post_id);
        EXPECT_EQ(back[i].values, v[i].values);
    }
    const auto m = nlohmann::json::parse(read_file(dir / "embeddings.manifest.json"));
    EXPECT_EQ(m["dimension"], 64);
    EXPECT_EQ(m["count"], 5);
    EXPECT_EQ(m["instruction_sha256"], sha256_hex(kDefaultInstruction));
    const auto mat = to_matrix(back);
    EXPECT_EQ(mat.rows(), 5u);
    EXPECT_EQ(mat.cols(), 64u);
}
