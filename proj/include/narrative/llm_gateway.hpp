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
#include "parallel.hpp"

#include <httplib.h>
// <resolv.h> defines _res as a macro, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

/**
 * @file llm_gateway.hpp
 *
 * @brief Client for OpenAI-compatible chat-completion and embedding endpoints.
 *
 * The gateway owns the retry policy and an admission limit on concurrent
 * wire requests. The wire itself sits behind `Transport`, so tests and
 * offline runs can swap in the mock provider without touching callers.
 */

namespace narrative::llm {

class GatewayError : public Error {
public:
    GatewayError(const std::string& what, int status = 0) : Error(what), status_(status) {}
    /// Last HTTP status seen, 0 for network-level failures.
    [[nodiscard]] int status() const noexcept { return status_; }

private:
    int status_;
};

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base_delay{1000};
    double multiplier = 2.0;
    std::chrono::milliseconds max_delay{30000};
    double jitter = 0.25; ///< Fraction of the delay drawn uniformly and added.
};

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8000";
    std::string api_key_env = "OPENAI_API_KEY"; ///< Name of the variable holding the key.
    std::string chat_model_id;
    std::string label_model_id;
    std::string embed_model_id;
    double timeout_seconds = 300.0;
    std::size_t max_in_flight = 8;
    std::size_t embed_batch_size = 64;
    int max_tokens = 4096;
    /// Wire text for instruction-aware embedders; `{instruction}` and `{text}` are substituted.
    std::string instruction_template = "Instruct: {instruction}\nQuery: {text}";
    RetryPolicy retry;

    void validate() const {
        if (max_in_flight < 1) throw InvalidArgument("max_in_flight must be >= 1");
        if (!(timeout_seconds > 0.0)) throw InvalidArgument("timeout must be positive");
        if (embed_batch_size < 1) throw InvalidArgument("embed_batch_size must be >= 1");
        if (retry.max_attempts < 1) throw InvalidArgument("retry.max_attempts must be >= 1");
    }

    [[nodiscard]] std::string api_key() const {
        if (api_key_env.empty()) return {};
        const char* v = std::getenv(api_key_env.c_str());
        return v ? std::string(v) : std::string();
    }
};

struct ChatRequest {
    std::string system;
    std::string user;
    double temperature = 0.0;
    int max_tokens = 0; ///< 0 = use the endpoint config value.
};

struct HttpResponse {
    int status = 0; ///< 0 when no response arrived (connection failure, timeout).
    std::string body;
    std::string error;
};

/// One POST to `path` relative to the endpoint base URL.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post(const std::string& path, const std::string& body) = 0;
};

/// Real wire transport over cpp-httplib; a client is created per request so calls are independent.
class HttpTransport final : public Transport {
public:
    HttpTransport(std::string base_url, std::string api_key, double timeout_seconds)
        : base_url_(std::move(base_url)), api_key_(std::move(api_key)), timeout_seconds_(timeout_seconds) {
        while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
        // A base URL may carry a path prefix (e.g. https://host/api); split it off.
        const auto scheme_end = base_url_.find("://");
        const auto path_start = base_url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
        if (path_start != std::string::npos) {
            prefix_ = base_url_.substr(path_start);
            base_url_.resize(path_start);
        }
    }

    HttpResponse post(const std::string& path, const std::string& body) override {
        httplib::Client client(base_url_);
        const auto secs = static_cast<time_t>(timeout_seconds_);
        const auto usecs = static_cast<time_t>((timeout_seconds_ - static_cast<double>(secs)) * 1e6);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client.Post(prefix_ + path, headers, body, "application/json");
        if (!res) return {0, {}, httplib::to_string(res.error())};
        return {res->status, res->body, {}};
    }

private:
    std::string base_url_;
    std::string prefix_;
    std::string api_key_;
    double timeout_seconds_;
};

/// Counting admission gate. std::counting_semaphore needs a compile-time bound; this does not.
class AdmissionGate {
public:
    explicit AdmissionGate(std::size_t limit) : available_(limit) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return available_ > 0; });
        --available_;
    }
    void release() {
        {
            std::lock_guard lock(mutex_);
            ++available_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::size_t available_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline std::string apply_instruction(std::string_view tmpl, std::string_view instruction, std::string_view text) {
    std::string out(tmpl);
    if (auto p = out.find("{instruction}"); p != std::string::npos) out.replace(p, 13, instruction);
    if (auto p = out.find("{text}"); p != std::string::npos) out.replace(p, 6, text);
    return out;
}

/**
 * Thread-safe front door for chat and embedding calls.
 *
 * Every wire attempt holds an admission slot, so at most `max_in_flight`
 * requests are outstanding; backoff sleeps happen outside the slot.
 */
class Gateway {
public:
    Gateway(EndpointConfig cfg, std::shared_ptr<Transport> transport, Sleeper sleeper = {})
        : cfg_(std::move(cfg)), transport_(std::move(transport)), gate_(cfg_.max_in_flight),
          sleeper_(sleeper ? std::move(sleeper) : Sleeper([](std::chrono::milliseconds d) {
              std::this_thread::sleep_for(d);
          })),
          jitter_rng_(0x6a09e667f3bcc909ULL) {
        cfg_.validate();
        if (!transport_) throw InvalidArgument("gateway needs a transport");
    }

    /// Builds a gateway over the real HTTP wire.
    static Gateway over_http(EndpointConfig cfg) {
        auto transport = std::make_shared<HttpTransport>(cfg.base_url, cfg.api_key(), cfg.timeout_seconds);
        return Gateway(std::move(cfg), std::move(transport));
    }

    [[nodiscard]] const EndpointConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::size_t wire_calls() const noexcept { return wire_calls_.load(); }
    [[nodiscard]] std::size_t embedding_dimension() const noexcept { return dimension_.load(); }

    /**
     * Sends one chat completion and returns the assistant message content.
     * @throws GatewayError on exhausted retries, terminal status or empty completion.
     */
    std::string chat_complete(const ChatRequest& req, const std::string& model_id) {
        if (req.user.empty()) throw InvalidArgument("chat request needs a user message");
        nlohmann::json body{{"model", model_id},
                            {"messages",
                             nlohmann::json::array({{{"role", "system"}, {"content", req.system}},
                                                    {{"role", "user"}, {"content", req.user}}})},
                            {"temperature", req.temperature},
                            {"max_tokens", req.max_tokens > 0 ? req.max_tokens : cfg_.max_tokens},
                            {"stream", false}};
        const auto res = send_with_retry("/v1/chat/completions", body.dump());
        auto j = nlohmann::json::parse(res.body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
            throw GatewayError("chat response has no choices", res.status);
        }
        const auto& msg = j["choices"][0]["message"];
        if (!msg.is_object() || !msg.contains("content") || !msg["content"].is_string()) {
            throw GatewayError("empty completion", res.status);
        }
        auto content = msg["content"].get<std::string>();
        if (trim(content).empty()) throw GatewayError("empty completion", res.status);
        return content;
    }

    /**
     * Embeds texts in batches of `embed_batch_size`, preserving input order.
     * Each text is wrapped with the instruction template when `instruction` is non-empty.
     * @throws InvalidArgument before any wire call if a text is empty.
     * @throws GatewayError on transport failures or inconsistent dimensions.
     */
    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts,
                                                 const std::string& instruction) {
        if (texts.empty()) throw InvalidArgument("embed_batch needs at least one text");
        for (const auto& t : texts) {
            if (t.empty()) throw InvalidArgument("embed_batch received an empty text");
        }
        const std::size_t batch = cfg_.embed_batch_size;
        const std::size_t n_batches = (texts.size() + batch - 1) / batch;
        std::vector<std::vector<double>> out(texts.size());
        parallel_for(n_batches, cfg_.max_in_flight, [&](std::size_t b) {
            const std::size_t lo = b * batch;
            const std::size_t hi = std::min(texts.size(), lo + batch);
            nlohmann::json input = nlohmann::json::array();
            for (std::size_t i = lo; i < hi; ++i) {
                input.push_back(instruction.empty()
                                    ? texts[i]
                                    : apply_instruction(cfg_.instruction_template, instruction, texts[i]));
            }
            nlohmann::json body{{"model", cfg_.embed_model_id}, {"input", std::move(input)}};
            const auto res = send_with_retry("/v1/embeddings", body.dump());
            auto j = nlohmann::json::parse(res.body, nullptr, false);
            if (j.is_discarded() || !j.contains("data") || !j["data"].is_array() || j["data"].size() != hi - lo) {
                throw GatewayError("embedding response does not match the batch", res.status);
            }
            for (std::size_t k = 0; k < hi - lo; ++k) {
                const auto& item = j["data"][k];
                const std::size_t idx = item.contains("index") ? item["index"].get<std::size_t>() : k;
                if (idx >= hi - lo) throw GatewayError("embedding index out of range", res.status);
                auto vec = item.at("embedding").get<std::vector<double>>();
                check_dimension(vec.size());
                out[lo + idx] = std::move(vec);
            }
        });
        return out;
    }

    /// Delay before retry number `attempt` (1-based: the wait after the first failure is attempt 1).
    [[nodiscard]] std::chrono::milliseconds backoff_delay(int attempt) {
        const auto& r = cfg_.retry;
        double ms = static_cast<double>(r.base_delay.count()) * std::pow(r.multiplier, attempt - 1);
        ms = std::min(ms, static_cast<double>(r.max_delay.count()));
        double u = 0.0;
        {
            std::lock_guard lock(jitter_mutex_);
            u = jitter_rng_.uniform();
        }
        return std::chrono::milliseconds(static_cast<long long>(ms * (1.0 + r.jitter * u)));
    }

private:
    static bool retryable(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

    HttpResponse send_with_retry(const std::string& path, const std::string& body) {
        HttpResponse last;
        for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
            gate_.acquire();
            try {
                ++wire_calls_;
                last = transport_->post(path, body);
            } catch (...) {
                gate_.release();
                throw;
            }
            gate_.release();
            if (last.status >= 200 && last.status < 300) return last;
            if (!retryable(last.status)) {
                throw GatewayError("terminal HTTP status " + std::to_string(last.status) + " from " + path,
                                   last.status);
            }
            if (attempt < cfg_.retry.max_attempts) sleeper_(backoff_delay(attempt));
        }
        const std::string why = last.status == 0 ? "network failure: " + last.error
                                                 : "HTTP " + std::to_string(last.status);
        throw GatewayError("retries exhausted after " + std::to_string(cfg_.retry.max_attempts) +
                               " attempts (" + why + ") on " + path,
                           last.status);
    }

    void check_dimension(std::size_t d) {
        if (d == 0) throw GatewayError("endpoint returned an empty embedding");
        std::size_t expected = 0;
        if (!dimension_.compare_exchange_strong(expected, d) && expected != d) {
            throw GatewayError("embedding dimension changed from " + std::to_string(expected) + " to " +
                               std::to_string(d));
        }
    }

    EndpointConfig cfg_;
    std::shared_ptr<Transport> transport_;
    AdmissionGate gate_;
    Sleeper sleeper_;
    std::mutex jitter_mutex_;
    Rng jitter_rng_;
    std::atomic<std::size_t> wire_calls_{0};
    std::atomic<std::size_t> dimension_{0};
};

} // namespace narrative::llm
