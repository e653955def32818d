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

#include <httplib.h>
#ifdef _res
#undef _res
#endif

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

/**
 * @file audit.hpp
 *
 * @brief Two-stage blind human audit of filter verdicts, and its HTTP service.
 *
 * Stage 1: the rater labels balanced, shuffled posts without seeing the model
 * verdict; "borderline" ratings are replaced from the same model class.
 * Stage 2: the rater sees verdict and reasoning and says whether the reasoning holds.
 */

namespace narrative::audit {

class AuditError : public Error {
public:
    enum class Kind { not_found, conflict, incomplete, exhausted, invalid };
    AuditError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

enum class HumanLabel { unset, narrative, not_narrative, borderline };

inline std::string_view to_string(HumanLabel l) noexcept {
    switch (l) {
    case HumanLabel::narrative: return "narrative";
    case HumanLabel::not_narrative: return "not_narrative";
    case HumanLabel::borderline: return "borderline";
    default: return "unset";
    }
}

inline HumanLabel parse_human_label(std::string_view s) {
    if (s == "narrative") return HumanLabel::narrative;
    if (s == "not_narrative") return HumanLabel::not_narrative;
    if (s == "borderline") return HumanLabel::borderline;
    if (s == "unset") return HumanLabel::unset;
    throw AuditError(AuditError::Kind::invalid, "unknown rating '" + std::string(s) + "'");
}

/// A post with its model verdict, as fed to sampling.
struct SampleSource {
    std::string post_id;
    std::string text;
    bool model_verdict = false;
    std::string model_reasoning;
};

struct AuditItem {
    std::string item_id;
    SampleSource source;
    HumanLabel human = HumanLabel::unset;
    std::optional<bool> stage2_agree;

    [[nodiscard]] bool eligible() const noexcept {
        return human == HumanLabel::narrative || human == HumanLabel::not_narrative;
    }
};

struct AuditSession {
    std::string session_id;
    std::uint64_t seed = 0;
    std::size_t n_per_class = 100;
    std::uint64_t version = 0;
    std::vector<AuditItem> items;      ///< Every item drawn so far, in draw order.
    std::vector<std::size_t> pending;  ///< Presentation queue (indices into items).
    std::vector<std::size_t> rated;    ///< Rating order (indices into items).
    std::vector<SampleSource> pool_positive; ///< Replacement draws come from the front.
    std::vector<SampleSource> pool_negative;

    [[nodiscard]] bool stage1_complete() const noexcept { return pending.empty(); }

    [[nodiscard]] const AuditItem* find(std::string_view item_id) const {
        for (const auto& it : items) {
            if (it.item_id == item_id) return &it;
        }
        return nullptr;
    }
};

inline std::string item_id_for(std::size_t index) {
    std::string digits = std::to_string(index + 1);
    if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
    return "item-" + digits;
}

/**
 * Seeded per-class draw of `n_per_class` items, shuffled for presentation.
 * The rest of each class, also shuffled, becomes its replacement pool.
 * The result does not depend on the order of `sources`.
 */
inline AuditSession balanced_sample(std::vector<SampleSource> sources, std::size_t n_per_class, std::uint64_t seed,
                                    std::string session_id = "session") {
    if (n_per_class == 0) throw AuditError(AuditError::Kind::invalid, "n_per_class must be positive");
    std::sort(sources.begin(), sources.end(), [](const auto& a, const auto& b) { return a.post_id < b.post_id; });
    std::vector<SampleSource> pos, neg;
    for (auto& s : sources) (s.model_verdict ? pos : neg).push_back(std::move(s));
    if (pos.size() < n_per_class || neg.size() < n_per_class) {
        throw AuditError(AuditError::Kind::invalid,
                         "need " + std::to_string(n_per_class) + " posts per class, have " + std::to_string(pos.size()) +
                             " positive and " + std::to_string(neg.size()) + " negative");
    }
    Rng rng_pos(mix_seed(seed ^ 0x706f73ULL));
    Rng rng_neg(mix_seed(seed ^ 0x6e6567ULL));
    Rng rng_order(mix_seed(seed ^ 0x6f7264ULL));
    rng_pos.shuffle(pos);
    rng_neg.shuffle(neg);

    AuditSession s;
    s.session_id = std::move(session_id);
    s.seed = seed;
    s.n_per_class = n_per_class;
    std::vector<SampleSource> chosen(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_per_class));
    chosen.insert(chosen.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_per_class));
    rng_order.shuffle(chosen);
    for (auto& c : chosen) {
        s.pending.push_back(s.items.size());
        s.items.push_back({item_id_for(s.items.size()), std::move(c), HumanLabel::unset, std::nullopt});
    }
    s.pool_positive.assign(pos.begin() + static_cast<std::ptrdiff_t>(n_per_class), pos.end());
    s.pool_negative.assign(neg.begin() + static_cast<std::ptrdiff_t>(n_per_class), neg.end());
    return s;
}

struct Progress {
    std::size_t narrative = 0;
    std::size_t not_narrative = 0;
    std::size_t borderline = 0;
    std::size_t pending = 0;
    std::size_t target = 0; ///< Eligible ratings needed to finish stage 1.
};

inline Progress progress(const AuditSession& s) {
    Progress p;
    for (auto i : s.rated) {
        switch (s.items[i].human) {
        case HumanLabel::narrative: ++p.narrative; break;
        case HumanLabel::not_narrative: ++p.not_narrative; break;
        case HumanLabel::borderline: ++p.borderline; break;
        default: break;
        }
    }
    p.pending = s.pending.size();
    p.target = 2 * s.n_per_class;
    return p;
}

struct SubmitResult {
    bool replaced = false;     ///< A replacement item joined the queue.
    bool complete = false;
    std::size_t pending = 0;
};

/**
 * Records a stage-1 rating. A borderline rating draws the next item of the same
 * model class from its pool and appends it to the queue; if the pool is empty
 * the call fails and the session is left unchanged.
 */
inline SubmitResult submit_rating(AuditSession& s, std::string_view item_id, HumanLabel label) {
    if (label == HumanLabel::unset) throw AuditError(AuditError::Kind::invalid, "rating must be set");
    std::size_t idx = s.items.size();
    for (std::size_t i = 0; i < s.items.size(); ++i) {
        if (s.items[i].item_id == item_id) idx = i;
    }
    if (idx == s.items.size()) throw AuditError(AuditError::Kind::not_found, "unknown item " + std::string(item_id));
    auto& item = s.items[idx];
    if (item.human != HumanLabel::unset) {
        throw AuditError(AuditError::Kind::conflict, "item " + std::string(item_id) + " is already rated");
    }
    SubmitResult r;
    if (label == HumanLabel::borderline) {
        auto& pool = item.source.model_verdict ? s.pool_positive : s.pool_negative;
        if (pool.empty()) throw AuditError(AuditError::Kind::exhausted, "replacement pool exhausted");
        auto next = std::move(pool.front());
        pool.erase(pool.begin());
        s.items.push_back({item_id_for(s.items.size()), std::move(next), HumanLabel::unset, std::nullopt});
        s.pending.push_back(s.items.size() - 1);
        r.replaced = true;
    }
    s.items[idx].human = label;
    s.pending.erase(std::find(s.pending.begin(), s.pending.end(), idx));
    s.rated.push_back(idx);
    ++s.version;
    r.pending = s.pending.size();
    r.complete = s.stage1_complete();
    return r;
}

/// Items eligible for stage 2, in rating order.
inline std::vector<std::size_t> stage2_items(const AuditSession& s) {
    std::vector<std::size_t> out;
    for (auto i : s.rated) {
        if (s.items[i].eligible()) out.push_back(i);
    }
    return out;
}

inline void submit_stage2(AuditSession& s, std::string_view item_id, bool agree) {
    if (!s.stage1_complete()) throw AuditError(AuditError::Kind::incomplete, "stage 1 is not complete");
    for (auto i : stage2_items(s)) {
        auto& item = s.items[i];
        if (item.item_id != item_id) continue;
        if (item.stage2_agree) throw AuditError(AuditError::Kind::conflict, "item already judged in stage 2");
        item.stage2_agree = agree;
        ++s.version;
        return;
    }
    throw AuditError(AuditError::Kind::not_found, "no stage-2 item " + std::string(item_id));
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ConfusionStats {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    [[nodiscard]] std::size_t total() const noexcept { return tp + fp + fn + tn; }
    bool operator==(const ConfusionStats&) const = default;
};

struct Metrics {
    double precision = 0, recall = 0, f1 = 0, accuracy = 0;
};

/// Model verdict against human label, positive = narrative; borderline never counts.
inline ConfusionStats compute_confusion(const AuditSession& s) {
    if (!s.stage1_complete()) throw AuditError(AuditError::Kind::incomplete, "stage 1 is not complete");
    ConfusionStats c;
    for (const auto& it : s.items) {
        if (!it.eligible()) continue;
        const bool human = it.human == HumanLabel::narrative;
        if (it.source.model_verdict) {
            ++(human ? c.tp : c.fp);
        } else {
            ++(human ? c.fn : c.tn);
        }
    }
    return c;
}

inline Metrics metrics_from_confusion(const ConfusionStats& c) {
    if (c.total() == 0) throw AuditError(AuditError::Kind::invalid, "no rated items");
    auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
    Metrics m;
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.accuracy = ratio(c.tp + c.tn, c.total());
    return m;
}

/// Share of stage-2 items whose reasoning the rater accepted; every eligible item must be judged.
inline double coherence_rate(const AuditSession& s) {
    const auto items = stage2_items(s);
    if (items.empty()) throw AuditError(AuditError::Kind::incomplete, "no stage-2 judgments");
    std::size_t agree = 0;
    for (auto i : items) {
        const auto& j = s.items[i].stage2_agree;
        if (!j) throw AuditError(AuditError::Kind::incomplete, "stage 2 is not complete");
        agree += *j;
    }
    return static_cast<double>(agree) / static_cast<double>(items.size());
}

// ---------------------------------------------------------------------------
// Payloads and persistence
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const Progress& p) {
    return {{"narrative", p.narrative}, {"not_narrative", p.not_narrative}, {"borderline", p.borderline},
            {"pending", p.pending},     {"target", p.target}};
}

/// Stage-1 view: the item text only. Built from an explicit key list so no model field can slip in.
inline nlohmann::json stage1_payload(const AuditSession& s, const AuditItem& item) {
    return {{"item_id", item.item_id}, {"text", item.source.text}, {"progress", to_json(progress(s))}};
}

inline nlohmann::json stage2_payload(const AuditSession& s, const AuditItem& item) {
    const auto items = stage2_items(s);
    std::size_t judged = 0;
    for (auto i : items) judged += s.items[i].stage2_agree.has_value();
    return {{"item_id", item.item_id},
            {"text", item.source.text},
            {"human_label", to_string(item.human)},
            {"model_verdict", item.source.model_verdict},
            {"model_reasoning", item.source.model_reasoning},
            {"stage2_progress", {{"judged", judged}, {"total", items.size()}}}};
}

inline nlohmann::json to_json(const SampleSource& s) {
    return {{"post_id", s.post_id}, {"text", s.text}, {"model_verdict", s.model_verdict},
            {"model_reasoning", s.model_reasoning}};
}

inline SampleSource source_from_json(const nlohmann::json& j) {
    return {j.at("post_id").get<std::string>(), j.at("text").get<std::string>(), j.at("model_verdict").get<bool>(),
            j.at("model_reasoning").get<std::string>()};
}

inline nlohmann::json to_json(const AuditSession& s) {
    auto items = nlohmann::json::array();
    for (const auto& it : s.items) {
        nlohmann::json e{{"item_id", it.item_id}, {"source", to_json(it.source)}, {"human_label", to_string(it.human)},
                         {"stage2_agree", nullptr}};
        if (it.stage2_agree) e["stage2_agree"] = *it.stage2_agree;
        items.push_back(std::move(e));
    }
    auto pool = [](const std::vector<SampleSource>& p) {
        auto a = nlohmann::json::array();
        for (const auto& x : p) a.push_back(to_json(x));
        return a;
    };
    return {{"session_id", s.session_id},   {"seed", s.seed},
            {"n_per_class", s.n_per_class}, {"version", s.version},
            {"items", items},               {"pending", s.pending},
            {"rated", s.rated},             {"pool_positive", pool(s.pool_positive)},
            {"pool_negative", pool(s.pool_negative)}};
}

inline AuditSession session_from_json(const nlohmann::json& j) {
    AuditSession s;
    s.session_id = j.at("session_id").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.n_per_class = j.at("n_per_class").get<std::size_t>();
    s.version = j.at("version").get<std::uint64_t>();
    for (const auto& e : j.at("items")) {
        AuditItem it{e.at("item_id").get<std::string>(), source_from_json(e.at("source")),
                     parse_human_label(e.at("human_label").get<std::string>()), std::nullopt};
        if (!e.at("stage2_agree").is_null()) it.stage2_agree = e["stage2_agree"].get<bool>();
        s.items.push_back(std::move(it));
    }
    s.pending = j.at("pending").get<std::vector<std::size_t>>();
    s.rated = j.at("rated").get<std::vector<std::size_t>>();
    for (auto i : s.pending) {
        if (i >= s.items.size()) throw FormatError("pending index out of range");
    }
    for (auto i : s.rated) {
        if (i >= s.items.size()) throw FormatError("rated index out of range");
    }
    for (const auto& x : j.at("pool_positive")) s.pool_positive.push_back(source_from_json(x));
    for (const auto& x : j.at("pool_negative")) s.pool_negative.push_back(source_from_json(x));
    return s;
}

/**
 * Sessions as one JSON file each under a directory. Mutations on a session are
 * serialized and checked against an optional expected version; the file is
 * rewritten after every accepted mutation.
 */
class SessionStore {
public:
    SessionStore(std::filesystem::path dir, std::vector<SampleSource> sources)
        : dir_(std::move(dir)), sources_(std::move(sources)) {
        std::filesystem::create_directories(dir_);
        for (const auto& e : std::filesystem::directory_iterator(dir_)) {
            if (e.path().extension() != ".json") continue;
            auto s = session_from_json(nlohmann::json::parse(read_file(e.path())));
            auto id = s.session_id;
            sessions_.emplace(id, std::make_shared<Entry>(std::move(s)));
        }
    }

    std::string create(std::uint64_t seed, std::size_t n_per_class) {
        std::lock_guard lock(mutex_);
        std::string id;
        for (std::size_t k = sessions_.size() + 1;; ++k) {
            id = "s" + std::to_string(k);
            if (!sessions_.count(id)) break;
        }
        auto s = balanced_sample(sources_, n_per_class, seed, id);
        persist(s);
        sessions_.emplace(id, std::make_shared<Entry>(std::move(s)));
        return id;
    }

    /// Copy of the current state.
    AuditSession get(const std::string& id) const {
        auto e = entry(id);
        std::lock_guard lock(e->mutex);
        return e->session;
    }

    /// Applies `fn` to a copy; commits and persists only if it returns normally.
    template <typename Fn>
    auto mutate(const std::string& id, std::optional<std::uint64_t> expected_version, Fn&& fn) {
        auto e = entry(id);
        std::lock_guard lock(e->mutex);
        if (expected_version && *expected_version != e->session.version) {
            throw AuditError(AuditError::Kind::conflict, "version conflict: session is at " +
                                                             std::to_string(e->session.version));
        }
        AuditSession copy = e->session;
        auto result = fn(copy);
        persist(copy);
        e->session = std::move(copy);
        return result;
    }

    [[nodiscard]] std::filesystem::path path_of(const std::string& id) const { return dir_ / (id + ".json"); }

private:
    struct Entry {
        explicit Entry(AuditSession s) : session(std::move(s)) {}
        std::mutex mutex;
        AuditSession session;
    };

    std::shared_ptr<Entry> entry(const std::string& id) const {
        std::lock_guard lock(mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw AuditError(AuditError::Kind::not_found, "unknown session " + id);
        return it->second;
    }

    void persist(const AuditSession& s) const { write_file_atomic(path_of(s.session_id), to_json(s).dump(1)); }

    std::filesystem::path dir_;
    std::vector<SampleSource> sources_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

// ---------------------------------------------------------------------------
// HTTP service
// ---------------------------------------------------------------------------

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

/// Transport-free request handlers, one per endpoint.
class AuditApi {
public:
    explicit AuditApi(SessionStore& store) : store_(store) {}

    ApiResponse create_session(const nlohmann::json& req) {
        return guard([&] {
            const auto seed = req.value("seed", std::uint64_t{0});
            const auto n = req.value("n_per_class", std::size_t{100});
            return ApiResponse{201, {{"session_id", store_.create(seed, n)}}};
        });
    }

    ApiResponse next(const std::string& id) {
        return guard([&] {
            const auto s = store_.get(id);
            if (s.stage1_complete()) {
                return ApiResponse{200, {{"complete", true}, {"progress", to_json(progress(s))}}};
            }
            return ApiResponse{200, stage1_payload(s, s.items[s.pending.front()])};
        });
    }

    ApiResponse rate(const std::string& id, const nlohmann::json& req) {
        return guard([&] {
            const auto item = req.at("item_id").get<std::string>();
            const auto label = parse_human_label(req.at("label").get<std::string>());
            auto [r, p, v] = store_.mutate(id, expected_version(req), [&](AuditSession& s) {
                auto res = submit_rating(s, item, label);
                return std::tuple{res, progress(s), s.version};
            });
            return ApiResponse{200,
                               {{"pending", r.pending},
                                {"complete", r.complete},
                                {"replaced", r.replaced},
                                {"progress", to_json(p)},
                                {"version", v}}};
        });
    }

    ApiResponse stage2_next(const std::string& id) {
        return guard([&] {
            const auto s = store_.get(id);
            if (!s.stage1_complete()) return incomplete("stage 1 is not complete");
            for (auto i : stage2_items(s)) {
                if (!s.items[i].stage2_agree) return ApiResponse{200, stage2_payload(s, s.items[i])};
            }
            return ApiResponse{200, {{"complete", true}}};
        });
    }

    ApiResponse stage2(const std::string& id, const nlohmann::json& req) {
        return guard([&] {
            const auto item = req.at("item_id").get<std::string>();
            const bool agree = req.at("agree").get<bool>();
            const auto v = store_.mutate(id, expected_version(req), [&](AuditSession& s) {
                submit_stage2(s, item, agree);
                return s.version;
            });
            return ApiResponse{200, {{"version", v}}};
        });
    }

    ApiResponse stats(const std::string& id) {
        return guard([&] {
            const auto s = store_.get(id);
            if (!s.stage1_complete()) return incomplete("stage 1 is not complete");
            const auto c = compute_confusion(s);
            const auto m = metrics_from_confusion(c);
            nlohmann::json body{
                {"confusion", {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}}},
                {"metrics",
                 {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"accuracy", m.accuracy}}},
                {"coherence", nullptr},
            };
            try {
                body["coherence"] = coherence_rate(s);
            } catch (const AuditError&) {
            }
            return ApiResponse{200, body};
        });
    }

private:
    static std::optional<std::uint64_t> expected_version(const nlohmann::json& req) {
        if (req.contains("version") && !req["version"].is_null()) return req["version"].get<std::uint64_t>();
        return std::nullopt;
    }

    static ApiResponse incomplete(const std::string& msg) { return {409, {{"error", "incomplete"}, {"detail", msg}}}; }

    template <typename Fn>
    static ApiResponse guard(Fn&& fn) {
        try {
            return fn();
        } catch (const AuditError& e) {
            switch (e.kind()) {
            case AuditError::Kind::not_found: return {404, {{"error", "not_found"}, {"detail", e.what()}}};
            case AuditError::Kind::incomplete: return incomplete(e.what());
            case AuditError::Kind::conflict: return {409, {{"error", "conflict"}, {"detail", e.what()}}};
            case AuditError::Kind::exhausted: return {409, {{"error", "pool_exhausted"}, {"detail", e.what()}}};
            default: return {400, {{"error", "invalid"}, {"detail", e.what()}}};
            }
        } catch (const nlohmann::json::exception& e) {
            return {400, {{"error", "invalid"}, {"detail", e.what()}}};
        }
    }

    SessionStore& store_;
};

struct ServeOptions {
    std::string bearer_token;                 ///< Empty disables authentication.
    std::optional<std::filesystem::path> static_dir;
};

/// Registers the endpoints on `server`.
inline void install_routes(httplib::Server& server, AuditApi& api, const ServeOptions& opts = {}) {
    auto reply = [](httplib::Response& res, const ApiResponse& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    auto parse_body = [](const httplib::Request& req) {
        auto j = nlohmann::json::parse(req.body.empty() ? std::string("{}") : req.body, nullptr, false);
        return j.is_discarded() || !j.is_object() ? std::optional<nlohmann::json>{} : std::optional{j};
    };
    const std::string token = opts.bearer_token;
    server.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
        if (token.empty() || req.path.rfind("/sessions", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
        if (req.get_header_value("Authorization") == "Bearer " + token) return httplib::Server::HandlerResponse::Unhandled;
        res.status = 401;
        res.set_content(R"({"error":"unauthorized"})", "application/json");
        return httplib::Server::HandlerResponse::Handled;
    });
    auto with_body = [=](auto handler) {
        return [=](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            if (!body) {
                reply(res, {400, {{"error", "invalid"}, {"detail", "body must be a JSON object"}}});
                return;
            }
            reply(res, handler(req, *body));
        };
    };
    server.Post("/sessions", with_body([&api](const httplib::Request&, const nlohmann::json& b) {
                    return api.create_session(b);
                }));
    server.Get(R"(/sessions/([^/]+)/next)", [&api, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, api.next(req.matches[1]));
    });
    server.Post(R"(/sessions/([^/]+)/ratings)", with_body([&api](const httplib::Request& req, const nlohmann::json& b) {
                    return api.rate(req.matches[1], b);
                }));
    server.Get(R"(/sessions/([^/]+)/stage2/next)", [&api, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, api.stage2_next(req.matches[1]));
    });
    server.Post(R"(/sessions/([^/]+)/stage2)", with_body([&api](const httplib::Request& req, const nlohmann::json& b) {
                    return api.stage2(req.matches[1], b);
                }));
    server.Get(R"(/sessions/([^/]+)/stats)", [&api, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, api.stats(req.matches[1]));
    });
    if (opts.static_dir && !server.set_mount_point("/", opts.static_dir->string())) {
        throw IoError("cannot serve static files from " + opts.static_dir->string());
    }
}

} // namespace narrative::audit
