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

#pragma once

#include "common.hpp"
#include "llm_gateway.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <map>
#include <optional>
#include <string>
#include <vector>

/**
 * @file mock_provider.hpp
 *
 * @brief Deterministic offline stand-in for an OpenAI-compatible endpoint.
 *
 * It speaks the same wire bodies as a real server, so the full gateway path
 * (request building, response parsing, batching, admission) is exercised.
 *
 * - Chat, filter prompts: `contains_narrative` is true iff the user message holds a
 *   "[[N" marker or one of the motif keywords.
 * - Chat, label prompts (system mentions "LABEL: "): the label names the most
 *   frequent marker in the user message.
 * - Embeddings: marker i maps near a seeded anchor, `normalize(anchor + 0.2 * u)`
 *   with u a seeded unit direction per text; unmarked text maps to u alone.
 * - A user message containing "[[GARBLE]]" gets a reply with no JSON in it.
 */

namespace narrative::llm {

struct MockConfig {
    std::uint64_t seed = 42;
    std::size_t dimension = 64;
    double noise_scale = 0.2;
    std::vector<std::string> motif_keywords = {"Russophobia", "#Remigration", "rtde.media"};
    std::chrono::microseconds latency{0};
};

/// Marker index if a "[[N{i}]]" token starts at `pos`.
inline std::optional<std::size_t> marker_at(std::string_view text, std::size_t pos) {
    if (text.substr(pos, 3) != "[[N") return std::nullopt;
    std::size_t i = pos + 3;
    std::size_t value = 0;
    while (i < text.size() && text[i] >= '0' && text[i] <= '9') {
        value = value * 10 + static_cast<std::size_t>(text[i] - '0');
        ++i;
    }
    if (i == pos + 3 || text.substr(i, 2) != "]]") return std::nullopt;
    return value;
}

/// First "[[N{i}]]" marker in the text.
inline std::optional<std::size_t> find_marker(std::string_view text) {
    for (auto pos = text.find("[[N"); pos != std::string_view::npos; pos = text.find("[[N", pos + 1)) {
        if (auto m = marker_at(text, pos)) return m;
    }
    return std::nullopt;
}

/// Occurrence count of every "[[N{i}]]" marker.
inline std::map<std::size_t, std::size_t> count_markers(std::string_view text) {
    std::map<std::size_t, std::size_t> counts;
    for (auto pos = text.find("[[N"); pos != std::string_view::npos; pos = text.find("[[N", pos + 1)) {
        if (auto m = marker_at(text, pos)) ++counts[*m];
    }
    return counts;
}

class MockProvider final : public Transport {
public:
    explicit MockProvider(MockConfig cfg = {}) : cfg_(std::move(cfg)) {}

    HttpResponse post(const std::string& path, const std::string& body) override {
        const auto now = ++in_flight_;
        auto seen = max_in_flight_.load();
        while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
        }
        if (cfg_.latency.count() > 0) std::this_thread::sleep_for(cfg_.latency);
        HttpResponse res;
        try {
            auto j = nlohmann::json::parse(body);
            if (path == "/v1/chat/completions") {
                ++chat_calls_;
                res = chat(j);
            } else if (path == "/v1/embeddings") {
                ++embed_calls_;
                res = embeddings(j);
            } else {
                res = {404, R"({"error":"unknown route"})", {}};
            }
        } catch (const std::exception& e) {
            res = {400, nlohmann::json{{"error", e.what()}}.dump(), {}};
        }
        --in_flight_;
        return res;
    }

    /// Deterministic unit vector for a wire text.
    [[nodiscard]] std::vector<double> embed_one(std::string_view text) const {
        auto noise = unit_vector(mix_seed(cfg_.seed ^ fnv1a64(text)));
        auto marker = find_marker(text);
        if (!marker) return noise;
        auto v = anchor(*marker);
        for (std::size_t d = 0; d < v.size(); ++d) v[d] += cfg_.noise_scale * noise[d];
        normalize(v);
        return v;
    }

    [[nodiscard]] std::vector<double> anchor(std::size_t marker) const {
        return unit_vector(mix_seed(cfg_.seed * 0x9e3779b97f4a7c15ULL + 0x5bd1e995ULL + marker));
    }

    [[nodiscard]] bool flags(std::string_view user) const {
        if (user.find("[[N") != std::string_view::npos) return true;
        for (const auto& k : cfg_.motif_keywords) {
            if (!k.empty() && user.find(k) != std::string_view::npos) return true;
        }
        return false;
    }

    [[nodiscard]] std::size_t chat_calls() const noexcept { return chat_calls_.load(); }
    [[nodiscard]] std::size_t embed_calls() const noexcept { return embed_calls_.load(); }
    [[nodiscard]] std::size_t max_in_flight_seen() const noexcept { return max_in_flight_.load(); }
    [[nodiscard]] const MockConfig& config() const noexcept { return cfg_; }

private:
    static void normalize(std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        s = std::sqrt(s);
        for (double& x : v) x /= s;
    }

    [[nodiscard]] std::vector<double> unit_vector(std::uint64_t seed) const {
        Rng rng(seed);
        std::vector<double> v(cfg_.dimension);
        for (double& x : v) x = rng.normal();
        normalize(v);
        return v;
    }

    static HttpResponse completion(const std::string& content) {
        nlohmann::json j{{"id", "mock"},
                         {"object", "chat.completion"},
                         {"choices", nlohmann::json::array({{{"index", 0},
                                                             {"message", {{"role", "assistant"}, {"content", content}}},
                                                             {"finish_reason", "stop"}}})}};
        return {200, j.dump(), {}};
    }

    HttpResponse chat(const nlohmann::json& req) const {
        std::string system, user;
        for (const auto& m : req.at("messages")) {
            if (m.at("role") == "system") system = m.at("content").get<std::string>();
            if (m.at("role") == "user") user = m.at("content").get<std::string>();
        }
        if (user.find("[[GARBLE]]") != std::string::npos) {
            return completion("I cannot comply with this request.");
        }
        if (system.find("LABEL: ") != std::string::npos) {
            const auto counts = count_markers(user);
            std::string label = "LABEL: Unattributed grievance cluster without a planted storyline";
            std::size_t best = 0;
            for (const auto& [marker, count] : counts) {
                if (count > best) {
                    best = count;
                    label = "LABEL: Planted narrative [[N" + std::to_string(marker) +
                            "]]: a hidden enemy deliberately betrays the people";
                }
            }
            return completion("Step 1: core claim identified.\nStep 2: enemy identified.\n"
                              "Step 3: manipulative angle identified.\n" +
                              label);
        }
        const bool positive = flags(user);
        nlohmann::json verdict{
            {"contains_narrative", positive},
            {"reasoning", positive ? "Text matches a planted narrative marker or a known campaign motif."
                                   : "Ordinary political opinion without a conspiratorial frame."}};
        return completion("<think>mock reasoning</think>\n```json\n" + verdict.dump() + "\n```");
    }

    HttpResponse embeddings(const nlohmann::json& req) const {
        const auto& input = req.at("input");
        std::vector<std::string> texts;
        if (input.is_string()) {
            texts.push_back(input.get<std::string>());
        } else {
            texts = input.get<std::vector<std::string>>();
        }
        nlohmann::json data = nlohmann::json::array();
        for (std::size_t i = 0; i < texts.size(); ++i) {
            data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", embed_one(texts[i])}});
        }
        return {200, nlohmann::json{{"object", "list"}, {"data", std::move(data)}}.dump(), {}};
    }

    MockConfig cfg_;
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> max_in_flight_{0};
    std::atomic<std::size_t> chat_calls_{0};
    std::atomic<std::size_t> embed_calls_{0};
};

} // namespace narrative::llm
