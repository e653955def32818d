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

#include "narrative/llm_gateway.hpp"
#include "narrative/mock_provider.hpp"

#include <gtest/gtest.h>

#include <deque>

using namespace narrative;
using namespace narrative::llm;

namespace {

std::string completion_body(const std::string& content) {
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

/// Replays queued responses; the last one repeats.
class ScriptedTransport final : public Transport {
public:
    explicit ScriptedTransport(std::deque<HttpResponse> script) : script_(std::move(script)) {}
    HttpResponse post(const std::string& path, const std::string& body) override {
        std::lock_guard lock(mutex_);
        paths.push_back(path);
        bodies.push_back(body);
        auto r = script_.front();
        if (script_.size() > 1) script_.pop_front();
        return r;
    }
    std::vector<std::string> paths;
    std::vector<std::string> bodies;

private:
    std::mutex mutex_;
    std::deque<HttpResponse> script_;
};

EndpointConfig config() {
    EndpointConfig cfg;
    cfg.chat_model_id = "chat-model";
    cfg.label_model_id = "label-model";
    cfg.embed_model_id = "embed-model";
    cfg.api_key_env = "";
    return cfg;
}

struct SleepLog {
    std::vector<std::chrono::milliseconds> delays;
    Sleeper sleeper() {
        return [this](std::chrono::milliseconds d) { delays.push_back(d); };
    }
};

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

TEST(Gateway, ChatRetriesTwiceOn429ThenSucceeds) {
    auto t = std::make_shared<ScriptedTransport>(
        std::deque<HttpResponse>{{429, "", {}}, {429, "", {}}, {200, completion_body("hello"), {}}});
    SleepLog log;
    Gateway gw(config(), t, log.sleeper());
    EXPECT_EQ(gw.chat_complete({"sys", "user", 0.0, 0}, "chat-model"), "hello");
    EXPECT_EQ(gw.wire_calls(), 3u);
    ASSERT_EQ(log.delays.size(), 2u);
    EXPECT_GE(log.delays[0].count(), 1000);
    EXPECT_LE(log.delays[0].count(), 1250);
    EXPECT_GE(log.delays[1].count(), 2000);
    EXPECT_LE(log.delays[1].count(), 2500);
    const auto body = nlohmann::json::parse(t->bodies.back());
    EXPECT_EQ(body["model"], "chat-model");
    EXPECT_EQ(body["temperature"], 0.0);
    EXPECT_EQ(body["messages"][0]["role"], "system");
    EXPECT_EQ(body["messages"][1]["content"], "user");
    EXPECT_EQ(t->paths.back(), "/v1/chat/completions");
}

TEST(Gateway, Always500ExhaustsRetries) {
    auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{{500, "boom", {}}});
    SleepLog log;
    Gateway gw(config(), t, log.sleeper());
    try {
        gw.chat_complete({"", "u", 0.0, 0}, "m");
        FAIL() << "expected GatewayError";
    } catch (const GatewayError& e) {
        EXPECT_EQ(e.status(), 500);
    }
    EXPECT_EQ(gw.wire_calls(), 5u);
    EXPECT_EQ(log.delays.size(), 4u);
}

TEST(Gateway, TerminalStatusAndNetworkFailure) {
    {
        auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{{401, "no", {}}});
        Gateway gw(config(), t, SleepLog{}.sleeper());
        EXPECT_THROW(gw.chat_complete({"", "u", 0.0, 0}, "m"), GatewayError);
        EXPECT_EQ(gw.wire_calls(), 1u);
    }
    {
        auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{{0, "", "timeout"}});
        auto cfg = config();
        cfg.retry.max_attempts = 2;
        Gateway gw(cfg, t, [](auto) {});
        EXPECT_THROW(gw.chat_complete({"", "u", 0.0, 0}, "m"), GatewayError);
        EXPECT_EQ(gw.wire_calls(), 2u);
    }
}

TEST(Gateway, EmptyCompletionIsError) {
    auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{{200, completion_body("  "), {}}});
    Gateway gw(config(), t, [](auto) {});
    EXPECT_THROW(gw.chat_complete({"", "u", 0.0, 0}, "m"), GatewayError);
    EXPECT_THROW(gw.chat_complete({"", "", 0.0, 0}, "m"), InvalidArgument);
}

TEST(Gateway, BackoffIsCapped) {
    auto cfg = config();
    Gateway gw(cfg, std::make_shared<MockProvider>(), [](auto) {});
    for (int k = 1; k <= 10; ++k) {
        const auto d = gw.backoff_delay(k).count();
        const double base = std::min(1000.0 * std::pow(2.0, k - 1), 30000.0);
        EXPECT_GE(d, static_cast<long long>(base));
        EXPECT_LE(d, static_cast<long long>(base * 1.25));
    }
}

TEST(Gateway, ConfigValidation) {
    auto cfg = config();
    cfg.max_in_flight = 0;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg = config();
    cfg.timeout_seconds = 0;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    EXPECT_THROW(Gateway(config(), nullptr), InvalidArgument);
}

TEST(Gateway, EmbedBatchingArithmetic) {
    auto mock = std::make_shared<MockProvider>();
    Gateway gw(config(), mock);
    std::vector<std::string> texts;
    for (int i = 0; i < 130; ++i) texts.push_back("text " + std::to_string(i));
    const auto v = gw.embed_batch(texts, "Find it: ");
    EXPECT_EQ(v.size(), 130u);
    EXPECT_EQ(mock->embed_calls(), 3u);
    EXPECT_EQ(gw.embedding_dimension(), 64u);
    // Order preserved: each vector equals the mock's vector for its own wire text.
    for (int i : {0, 63, 64, 129}) {
        EXPECT_EQ(v[i], mock->embed_one(apply_instruction(config().instruction_template, "Find it: ", texts[i])));
    }
}

TEST(Gateway, EmptyTextRejectedBeforeWire) {
    auto mock = std::make_shared<MockProvider>();
    Gateway gw(config(), mock);
    EXPECT_THROW(gw.embed_batch({"a", "", "c"}, ""), InvalidArgument);
    EXPECT_THROW(gw.embed_batch({}, ""), InvalidArgument);
    EXPECT_EQ(gw.wire_calls(), 0u);
}

TEST(Gateway, DimensionMismatchAcrossBatches) {
    auto body = [](std::size_t dim) {
        return nlohmann::json{{"data", {{{"index", 0}, {"embedding", std::vector<double>(dim, 1.0)}}}}}.dump();
    };
    auto t = std::make_shared<ScriptedTransport>(
        std::deque<HttpResponse>{{200, body(4), {}}, {200, body(5), {}}});
    auto cfg = config();
    cfg.embed_batch_size = 1;
    cfg.max_in_flight = 1;
    Gateway gw(cfg, t);
    EXPECT_THROW(gw.embed_batch({"a", "b"}, ""), GatewayError);
}

TEST(Gateway, InstructionTemplate) {
    EXPECT_EQ(apply_instruction("Instruct: {instruction}\nQuery: {text}", "Do X: ", "hello"),
              "Instruct: Do X: \nQuery: hello");
}

TEST(Gateway, InFlightNeverExceedsLimit) {
    MockConfig mc;
    mc.latency = std::chrono::milliseconds(5);
    auto mock = std::make_shared<MockProvider>(mc);
    auto cfg = config();
    cfg.max_in_flight = 3;
    Gateway gw(cfg, mock);
    std::vector<std::jthread> callers;
    for (int t = 0; t < 12; ++t) {
        callers.emplace_back([&gw, t] {
            for (int i = 0; i < 5; ++i) gw.chat_complete({"s", "post " + std::to_string(t * 10 + i), 0.0, 0}, "m");
        });
    }
    callers.clear();
    EXPECT_EQ(mock->chat_calls(), 60u);
    EXPECT_LE(mock->max_in_flight_seen(), 3u);
    EXPECT_GE(mock->max_in_flight_seen(), 2u);
}

TEST(HttpWire, RetryAndBearerOverRealSocket) {
    httplib::Server server;
    std::atomic<int> hits{0};
    std::string auth;
    server.Post("/api/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        auth = req.get_header_value("Authorization");
        if (++hits <= 2) {
            res.status = 429;
            return;
        }
        res.set_content(completion_body("over the wire"), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    auto cfg = config();
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/api";
    cfg.timeout_seconds = 5;
    auto transport = std::make_shared<HttpTransport>(cfg.base_url, "secret-token", cfg.timeout_seconds);
    Gateway gw(cfg, transport, [](auto) {});
    EXPECT_EQ(gw.chat_complete({"s", "u", 0.0, 0}, "m"), "over the wire");
    EXPECT_EQ(hits.load(), 3);
    EXPECT_EQ(auth, "Bearer secret-token");
    server.stop();
    th.join();
}

TEST(HttpWire, UnreachableEndpointIsNetworkError) {
    HttpTransport t("http://127.0.0.1:1", "", 1.0);
    const auto r = t.post("/v1/embeddings", "{}");
    EXPECT_EQ(r.status, 0);
    EXPECT_FALSE(r.error.empty());
}

TEST(MockProvider, MarkedTextNearAnchor) {
    MockProvider mock;
    EXPECT_GT(cosine(mock.embed_one("[[N2]] something"), mock.anchor(2)), 0.9);
    EXPECT_EQ(mock.embed_one("x"), mock.embed_one("x"));
    EXPECT_NE(mock.embed_one("x"), mock.embed_one("y"));
}

TEST(MockProvider, SameMarkerCloserThanCrossMarker) {
    MockProvider mock;
    std::vector<std::vector<double>> v[3];
    for (int m = 0; m < 3; ++m) {
        for (int i = 0; i < 10; ++i) v[m].push_back(mock.embed_one("[[N" + std::to_string(m) + "]] t" + std::to_string(i)));
    }
    double min_same = 1.0, max_cross = -1.0;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            for (std::size_t i = 0; i < 10; ++i) {
                for (std::size_t j = 0; j < 10; ++j) {
                    if (a == b && i == j) continue;
                    const double c = cosine(v[a][i], v[b][j]);
                    if (a == b) min_same = std::min(min_same, c);
                    else max_cross = std::max(max_cross, c);
                }
            }
        }
    }
    EXPECT_GT(min_same, max_cross);
}

TEST(MockProvider, ChatRules) {
    auto mock = std::make_shared<MockProvider>();
    Gateway gw(config(), mock);
    auto reply = gw.chat_complete({"s", "[[N1]] hello", 0.0, 0}, "m");
    EXPECT_NE(reply.find("\"contains_narrative\":true"), std::string::npos);
    reply = gw.chat_complete({"s", "I'll only vote for you if #Remigration", 0.0, 0}, "m");
    EXPECT_NE(reply.find("\"contains_narrative\":true"), std::string::npos);
    reply = gw.chat_complete({"s", "the bus was late", 0.0, 0}, "m");
    EXPECT_NE(reply.find("\"contains_narrative\":false"), std::string::npos);
    reply = gw.chat_complete({"s", "[[GARBLE]]", 0.0, 0}, "m");
    EXPECT_EQ(reply.find('{'), std::string::npos);
    reply = gw.chat_complete({"end with LABEL: ", "[[N3]] a [[N3]] b [[N1]] c", 0.0, 0}, "m");
    EXPECT_NE(reply.find("LABEL: Planted narrative [[N3]]"), std::string::npos);
}
