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

#include "narrative/audit.hpp"
#include "support/temp_dir.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace narrative;
using namespace narrative::audit;
using testing_support::TempDir;

namespace {

std::vector<SampleSource> sources(std::size_t pos, std::size_t neg) {
    std::vector<SampleSource> out;
    for (std::size_t i = 0; i < pos; ++i) {
        out.push_back({"pos" + std::to_string(i), "flagged text " + std::to_string(i), true, "reason p" + std::to_string(i)});
    }
    for (std::size_t i = 0; i < neg; ++i) {
        out.push_back({"neg" + std::to_string(i), "plain text " + std::to_string(i), false, "reason n" + std::to_string(i)});
    }
    return out;
}

std::size_t count_class(const AuditSession& s, bool model) {
    std::size_t n = 0;
    for (const auto& it : s.items) n += it.eligible() && it.source.model_verdict == model;
    return n;
}

/// Rates every pending item; the rater agrees with the model except where `flip` says otherwise.
void rate_all(AuditSession& s, const std::function<HumanLabel(const AuditItem&, std::size_t)>& rater) {
    std::size_t step = 0;
    while (!s.pending.empty()) {
        const auto& item = s.items[s.pending.front()];
        submit_rating(s, item.item_id, rater(item, step++));
    }
}

HumanLabel agree(const AuditItem& it, std::size_t) {
    return it.source.model_verdict ? HumanLabel::narrative : HumanLabel::not_narrative;
}

nlohmann::json http_json(const httplib::Result& r) { return nlohmann::json::parse(r->body); }

} // namespace

TEST(BalancedSample, ShapeAndDeterminism) {
    const auto s = balanced_sample(sources(500, 500), 100, 7);
    EXPECT_EQ(s.items.size(), 200u);
    EXPECT_EQ(s.pending.size(), 200u);
    EXPECT_EQ(s.pool_positive.size(), 400u);
    EXPECT_EQ(s.pool_negative.size(), 400u);
    std::size_t pos = 0;
    for (const auto& it : s.items) pos += it.source.model_verdict;
    EXPECT_EQ(pos, 100u);
    // Shuffled: the first 20 are not all one class.
    std::size_t head = 0;
    for (std::size_t i = 0; i < 20; ++i) head += s.items[s.pending[i]].source.model_verdict;
    EXPECT_GT(head, 0u);
    EXPECT_LT(head, 20u);

    EXPECT_EQ(to_json(balanced_sample(sources(500, 500), 100, 7)), to_json(s));
    EXPECT_NE(to_json(balanced_sample(sources(500, 500), 100, 8)), to_json(s));
    auto reversed = sources(500, 500);
    std::reverse(reversed.begin(), reversed.end());
    EXPECT_EQ(to_json(balanced_sample(reversed, 100, 7)), to_json(s));
}

TEST(BalancedSample, InsufficientClass) {
    EXPECT_THROW(balanced_sample(sources(50, 500), 100, 1), AuditError);
    EXPECT_THROW(balanced_sample(sources(500, 99), 100, 1), AuditError);
    EXPECT_NO_THROW(balanced_sample(sources(100, 100), 100, 1));
}

TEST(SubmitRating, BorderlineReplacesFromSameClass) {
    auto s = balanced_sample(sources(150, 150), 100, 3);
    std::size_t pos_idx = 0;
    while (!s.items[s.pending[pos_idx]].source.model_verdict) ++pos_idx;
    const auto id = s.items[s.pending[pos_idx]].item_id;
    const auto r = submit_rating(s, id, HumanLabel::borderline);
    EXPECT_TRUE(r.replaced);
    EXPECT_EQ(r.pending, 200u);
    EXPECT_EQ(s.pool_positive.size(), 49u);
    EXPECT_EQ(s.pool_negative.size(), 50u);
    EXPECT_TRUE(s.items[s.pending.back()].source.model_verdict);
    EXPECT_EQ(s.version, 1u);

    std::size_t neg_idx = 0;
    while (s.items[s.pending[neg_idx]].source.model_verdict) ++neg_idx;
    const auto r2 = submit_rating(s, s.items[s.pending[neg_idx]].item_id, HumanLabel::not_narrative);
    EXPECT_FALSE(r2.replaced);
    EXPECT_EQ(r2.pending, 199u);
}

TEST(SubmitRating, Errors) {
    auto s = balanced_sample(sources(100, 100), 100, 3);
    const auto id = s.items[s.pending.front()].item_id;
    EXPECT_THROW(submit_rating(s, "nope", HumanLabel::narrative), AuditError);
    EXPECT_THROW(submit_rating(s, id, HumanLabel::unset), AuditError);
    const auto before = to_json(s);
    try {
        submit_rating(s, id, HumanLabel::borderline);
        FAIL() << "expected pool exhaustion";
    } catch (const AuditError& e) {
        EXPECT_EQ(e.kind(), AuditError::Kind::exhausted);
    }
    EXPECT_EQ(to_json(s), before);
    submit_rating(s, id, HumanLabel::narrative);
    try {
        submit_rating(s, id, HumanLabel::narrative);
        FAIL() << "expected conflict";
    } catch (const AuditError& e) {
        EXPECT_EQ(e.kind(), AuditError::Kind::conflict);
    }
}

TEST(Session, BorderlinesStillYieldFullEligibleSet) {
    auto s = balanced_sample(sources(300, 300), 100, 11);
    Rng rng(5);
    rate_all(s, [&](const AuditItem& it, std::size_t) {
        return rng.uniform() < 0.1 ? HumanLabel::borderline : agree(it, 0);
    });
    EXPECT_EQ(count_class(s, true), 100u);
    EXPECT_EQ(count_class(s, false), 100u);
    EXPECT_GT(progress(s).borderline, 0u);
    EXPECT_EQ(compute_confusion(s), (ConfusionStats{100, 0, 0, 100}));
}

TEST(Confusion, FixedConfusionFixture) {
    auto s = balanced_sample(sources(100, 100), 100, 2);
    std::size_t fp = 0, fn = 0;
    rate_all(s, [&](const AuditItem& it, std::size_t) {
        if (it.source.model_verdict) return fp++ < 34 ? HumanLabel::not_narrative : HumanLabel::narrative;
        return fn++ < 6 ? HumanLabel::narrative : HumanLabel::not_narrative;
    });
    const auto c = compute_confusion(s);
    EXPECT_EQ(c, (ConfusionStats{66, 34, 6, 94}));
    EXPECT_EQ(c.total(), 200u);
    EXPECT_THROW(compute_confusion(balanced_sample(sources(100, 100), 100, 2)), AuditError);
}

TEST(Metrics, Values) {
    const auto m = metrics_from_confusion({66, 34, 6, 94});
    EXPECT_NEAR(m.precision, 0.66, 1e-12);
    EXPECT_NEAR(m.recall, 66.0 / 72.0, 1e-12);
    EXPECT_NEAR(m.f1, 2 * 0.66 * (66.0 / 72.0) / (0.66 + 66.0 / 72.0), 1e-12);
    EXPECT_NEAR(m.f1, 0.77, 0.005);
    EXPECT_NEAR(m.accuracy, 0.8, 1e-12);
    const auto p = metrics_from_confusion({100, 0, 0, 100});
    EXPECT_EQ(p.precision, 1.0);
    EXPECT_EQ(p.recall, 1.0);
    EXPECT_EQ(p.f1, 1.0);
    EXPECT_EQ(p.accuracy, 1.0);
    const auto z = metrics_from_confusion({0, 10, 10, 0});
    EXPECT_EQ(z.precision, 0.0);
    EXPECT_EQ(z.recall, 0.0);
    EXPECT_EQ(z.f1, 0.0);
    EXPECT_THROW(metrics_from_confusion({}), AuditError);
}

TEST(Coherence, RateAndPreconditions) {
    auto s = balanced_sample(sources(100, 100), 100, 4);
    EXPECT_THROW(submit_stage2(s, s.items[0].item_id, true), AuditError);
    rate_all(s, agree);
    EXPECT_THROW(coherence_rate(s), AuditError);
    const auto items = stage2_items(s);
    ASSERT_EQ(items.size(), 200u);
    for (std::size_t k = 0; k < items.size(); ++k) submit_stage2(s, s.items[items[k]].item_id, k >= 9);
    EXPECT_DOUBLE_EQ(coherence_rate(s), 0.955);
    EXPECT_THROW(submit_stage2(s, s.items[items[0]].item_id, true), AuditError);

    auto all = balanced_sample(sources(100, 100), 100, 4);
    rate_all(all, agree);
    for (auto i : stage2_items(all)) submit_stage2(all, all.items[i].item_id, true);
    EXPECT_EQ(coherence_rate(all), 1.0);
}

TEST(Payloads, StageOneCarriesNoModelFields) {
    auto s = balanced_sample(sources(120, 120), 100, 9);
    const auto j = stage1_payload(s, s.items[s.pending.front()]);
    std::set<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
    EXPECT_EQ(keys, (std::set<std::string>{"item_id", "text", "progress"}));
    for (auto it = j["progress"].begin(); it != j["progress"].end(); ++it) {
        EXPECT_EQ(it.key().find("model"), std::string::npos);
    }
    const auto dump = j.dump();
    EXPECT_EQ(dump.find("reason"), std::string::npos);
    EXPECT_EQ(dump.find("verdict"), std::string::npos);
    const auto j2 = stage2_payload(s, s.items[0]);
    EXPECT_TRUE(j2.contains("model_verdict"));
    EXPECT_TRUE(j2.contains("model_reasoning"));
}

TEST(Persistence, SessionRoundTrip) {
    auto s = balanced_sample(sources(130, 130), 100, 12);
    submit_rating(s, s.items[s.pending[0]].item_id, HumanLabel::borderline);
    submit_rating(s, s.items[s.pending[0]].item_id, HumanLabel::narrative);
    EXPECT_EQ(to_json(session_from_json(to_json(s))), to_json(s));
    auto bad = to_json(s);
    bad["pending"].push_back(100000);
    EXPECT_THROW(session_from_json(bad), FormatError);
}

TEST(Store, VersionConflictAndReload) {
    TempDir dir;
    std::string id;
    {
        SessionStore store(dir.path(), sources(110, 110));
        id = store.create(1, 100);
        const auto first = store.get(id).items[store.get(id).pending[0]].item_id;
        store.mutate(id, 0u, [&](AuditSession& s) { return submit_rating(s, first, HumanLabel::narrative); });
        const auto second = store.get(id).items[store.get(id).pending[0]].item_id;
        EXPECT_THROW(store.mutate(id, 0u,
                                  [&](AuditSession& s) { return submit_rating(s, second, HumanLabel::narrative); }),
                     AuditError);
        EXPECT_EQ(store.get(id).version, 1u);
        EXPECT_TRUE(std::filesystem::exists(store.path_of(id)));
    }
    SessionStore reopened(dir.path(), sources(110, 110));
    EXPECT_EQ(reopened.get(id).version, 1u);
    EXPECT_EQ(reopened.get(id).rated.size(), 1u);
    EXPECT_NE(reopened.create(1, 100), id);
}

TEST(Service, EndToEndOverHttp) {
    TempDir dir;
    SessionStore store(dir.path(), sources(150, 150));
    AuditApi api(store);
    httplib::Server server;
    install_routes(server, api, {"secret", std::nullopt});
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    EXPECT_EQ(cli.Post("/sessions", R"({"seed": 5})", "application/json")->status, 401);
    cli.set_bearer_token_auth("secret");
    auto created = cli.Post("/sessions", R"({"seed": 5, "n_per_class": 100})", "application/json");
    ASSERT_TRUE(created);
    ASSERT_EQ(created->status, 201);
    const auto id = http_json(created)["session_id"].get<std::string>();
    const std::string base = "/sessions/" + id;

    EXPECT_EQ(cli.Get(base + "/stats")->status, 409);
    EXPECT_EQ(cli.Get(base + "/stage2/next")->status, 409);
    EXPECT_EQ(cli.Get("/sessions/missing/next")->status, 404);
    EXPECT_EQ(cli.Post(base + "/ratings", "not json", "application/json")->status, 400);

    bool first = true;
    while (true) {
        auto next = http_json(cli.Get(base + "/next"));
        if (next.value("complete", false)) break;
        EXPECT_FALSE(next.contains("model_verdict"));
        EXPECT_FALSE(next.contains("model_reasoning"));
        const auto item = next["item_id"].get<std::string>();
        const bool flagged = next["text"].get<std::string>().rfind("flagged", 0) == 0;
        nlohmann::json body{{"item_id", item}, {"label", flagged ? "narrative" : "not_narrative"}};
        if (first) {
            body["label"] = "borderline";
            first = false;
        }
        auto res = cli.Post(base + "/ratings", body.dump(), "application/json");
        ASSERT_EQ(res->status, 200) << res->body;
        if (body["label"] == "borderline") {
            EXPECT_EQ(http_json(res)["pending"], 200);
            EXPECT_EQ(cli.Post(base + "/ratings", body.dump(), "application/json")->status, 409);
        }
    }
    auto stale = cli.Post(base + "/stage2", R"({"item_id": "item-0001", "agree": true, "version": 0})",
                          "application/json");
    EXPECT_EQ(stale->status, 409);

    int judged = 0;
    while (true) {
        auto next = http_json(cli.Get(base + "/stage2/next"));
        if (next.value("complete", false)) break;
        EXPECT_TRUE(next.contains("model_verdict"));
        nlohmann::json body{{"item_id", next["item_id"]}, {"agree", judged++ >= 9}};
        ASSERT_EQ(cli.Post(base + "/stage2", body.dump(), "application/json")->status, 200);
    }
    EXPECT_EQ(judged, 200);
    auto stats = cli.Get(base + "/stats");
    ASSERT_EQ(stats->status, 200);
    const auto j = http_json(stats);
    EXPECT_EQ(j["confusion"]["tp"], 100);
    EXPECT_EQ(j["confusion"]["tn"], 100);
    EXPECT_DOUBLE_EQ(j["coherence"].get<double>(), 0.955);
    EXPECT_EQ(j["metrics"]["f1"], 1.0);

    server.stop();
    th.join();
    const auto on_disk = session_from_json(nlohmann::json::parse(read_file(store.path_of(id))));
    EXPECT_EQ(to_json(on_disk), to_json(store.get(id)));
}
