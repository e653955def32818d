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
#include "corpus.hpp"
#include "embed_stage.hpp"
#include "llm_gateway.hpp"
#include "manifold.hpp"
#include "mock_provider.hpp"
#include "tuner.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

/**
 * @file config.hpp
 *
 * @brief Run configuration: a TOML-style file with one section per stage.
 *
 * Parsing is CLI11's TOML reader; this file maps keys onto typed settings and
 * rejects unknown keys.
 */

namespace narrative::config {

class ConfigError : public Error {
public:
    using Error::Error;
};

struct CorpusSettings {
    std::string source = "synthetic"; ///< "synthetic" or "file".
    std::filesystem::path path;
    corpus::Format format = corpus::Format::jsonl;
    corpus::SynthSpec synthetic;
};

struct ProviderSettings {
    std::string kind = "mock"; ///< "mock" or "openai".
    llm::EndpointConfig endpoint;
    llm::MockConfig mock;
};

struct LabelingSettings {
    std::size_t top_n = 10;
    std::size_t min_count = 3;
    std::size_t representative_docs = 8;
    bool use_stopwords = true;
    std::filesystem::path stopwords_dir;
};

struct AuditSettings {
    std::string bind = "127.0.0.1";
    int port = 8080;
    std::string token_env;
    std::filesystem::path static_dir;
    std::size_t n_per_class = 100;
    std::uint64_t seed = 42;
};

struct RunConfig {
    std::string run_id = "run";
    CorpusSettings corpus;
    ProviderSettings provider;
    int reformat_retries = 1;
    std::filesystem::path prompts_dir; ///< Empty: built-in prompt fragments.
    std::string instruction = std::string(embed::kDefaultInstruction);
    manifold::LayoutConfig layout5d = [] {
        manifold::LayoutConfig c;
        c.n_components = 5;
        return c;
    }();
    manifold::LayoutConfig layout2d = [] {
        manifold::LayoutConfig c;
        c.n_components = 2;
        return c;
    }();
    std::size_t min_samples = 100;
    bool allow_single_cluster = false;
    std::vector<std::size_t> candidates = tuner::default_candidates();
    LabelingSettings labeling;
    AuditSettings audit;

    void validate() const {
        if (run_id.empty()) throw ConfigError("run.run_id must not be empty");
        if (corpus.source != "synthetic" && corpus.source != "file") {
            throw ConfigError("corpus.source must be \"synthetic\" or \"file\"");
        }
        if (corpus.source == "file" && corpus.path.empty()) throw ConfigError("corpus.path is required for file input");
        if (provider.kind != "mock" && provider.kind != "openai") {
            throw ConfigError("provider.kind must be \"mock\" or \"openai\"");
        }
        if (provider.kind == "openai" &&
            (provider.endpoint.chat_model_id.empty() || provider.endpoint.label_model_id.empty() ||
             provider.endpoint.embed_model_id.empty())) {
            throw ConfigError("provider.chat_model_id, label_model_id and embed_model_id are required");
        }
        if (candidates.empty()) throw ConfigError("sweep.candidates must not be empty");
        if (min_samples < 1) throw ConfigError("density.min_samples must be >= 1");
        for (auto c : candidates) {
            if (c < 2) throw ConfigError("sweep candidates must be >= 2");
        }
        try {
            provider.endpoint.validate();
            layout5d.validate();
            layout2d.validate();
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
    }
};

namespace detail {

using Values = std::vector<std::string>;

inline std::string one(const std::string& key, const Values& v) {
    if (v.size() != 1) throw ConfigError(key + " expects a single value");
    return v.front();
}

template <typename T>
T integer(const std::string& key, const Values& v) {
    const auto s = one(key, v);
    T out{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError(key + ": not an integer: " + s);
    return out;
}

inline double real(const std::string& key, const Values& v) {
    try {
        return parse_double(one(key, v));
    } catch (const FormatError&) {
        throw ConfigError(key + ": not a number: " + v.front());
    }
}

inline bool boolean(const std::string& key, const Values& v) {
    const auto s = one(key, v);
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError(key + ": expected true or false");
}

inline std::vector<std::size_t> integer_list(const std::string& key, const Values& v) {
    std::vector<std::size_t> out;
    for (const auto& s : v) out.push_back(integer<std::size_t>(key, {s}));
    return out;
}

inline manifold::Metric metric(const std::string& key, const Values& v) {
    const auto s = one(key, v);
    if (s == "cosine") return manifold::Metric::cosine;
    if (s == "euclidean") return manifold::Metric::euclidean;
    throw ConfigError(key + ": metric must be cosine or euclidean");
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& s) {
    if (s.empty()) return {};
    std::filesystem::path p(s);
    return p.is_absolute() ? p : base / p;
}

inline void layout_keys(std::map<std::string, std::function<void(const Values&)>>& setters, const std::string& section,
                        manifold::LayoutConfig& c) {
    const auto k = [&](const char* name) { return section + "." + name; };
    setters[k("n_neighbors")] = [&c, key = k("n_neighbors")](const Values& v) { c.n_neighbors = integer<std::size_t>(key, v); };
    setters[k("n_components")] = [&c, key = k("n_components")](const Values& v) { c.n_components = integer<std::size_t>(key, v); };
    setters[k("min_dist")] = [&c, key = k("min_dist")](const Values& v) { c.min_dist = real(key, v); };
    setters[k("spread")] = [&c, key = k("spread")](const Values& v) { c.spread = real(key, v); };
    setters[k("n_epochs")] = [&c, key = k("n_epochs")](const Values& v) { c.n_epochs = integer<int>(key, v); };
    setters[k("learning_rate")] = [&c, key = k("learning_rate")](const Values& v) { c.learning_rate = real(key, v); };
    setters[k("negative_sample_rate")] = [&c, key = k("negative_sample_rate")](const Values& v) {
        c.negative_sample_rate = real(key, v);
    };
    setters[k("seed")] = [&c, key = k("seed")](const Values& v) { c.seed = integer<std::uint64_t>(key, v); };
    setters[k("deterministic")] = [&c, key = k("deterministic")](const Values& v) { c.deterministic = boolean(key, v); };
    setters[k("metric")] = [&c, key = k("metric")](const Values& v) { c.metric = metric(key, v); };
    setters[k("exact_knn_threshold")] = [&c, key = k("exact_knn_threshold")](const Values& v) {
        c.knn.exact_threshold = integer<std::size_t>(key, v);
    };
}

} // namespace detail

/**
 * Parses a configuration document. Relative paths resolve against `base_dir`.
 * @throws ConfigError on unknown keys, malformed values or an invalid result.
 */
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
    using namespace detail;
    RunConfig cfg;
    auto& ep = cfg.provider.endpoint;
    ep.chat_model_id = "mock-chat";
    ep.label_model_id = "mock-label";
    ep.embed_model_id = "mock-embed";
    ep.api_key_env = "";
    std::map<std::string, std::function<void(const Values&)>> set;

    set["run.run_id"] = [&](const Values& v) { cfg.run_id = one("run.run_id", v); };

    set["corpus.source"] = [&](const Values& v) { cfg.corpus.source = one("corpus.source", v); };
    set["corpus.path"] = [&](const Values& v) { cfg.corpus.path = resolve(base_dir, one("corpus.path", v)); };
    set["corpus.format"] = [&](const Values& v) {
        try {
            cfg.corpus.format = corpus::parse_format(one("corpus.format", v));
        } catch (const Error& e) {
            throw ConfigError(std::string("corpus.format: ") + e.what());
        }
    };
    auto& synth = cfg.corpus.synthetic;
    set["synthetic.n_narratives"] = [&](const Values& v) { synth.n_narratives = integer<std::size_t>("synthetic.n_narratives", v); };
    set["synthetic.posts_per_narrative"] = [&](const Values& v) {
        synth.posts_per_narrative = integer<std::size_t>("synthetic.posts_per_narrative", v);
    };
    set["synthetic.distractor_fraction"] = [&](const Values& v) {
        synth.distractor_fraction = real("synthetic.distractor_fraction", v);
    };
    set["synthetic.seed"] = [&](const Values& v) { synth.seed = integer<std::uint64_t>("synthetic.seed", v); };

    set["provider.kind"] = [&](const Values& v) { cfg.provider.kind = one("provider.kind", v); };
    set["provider.base_url"] = [&](const Values& v) { ep.base_url = one("provider.base_url", v); };
    set["provider.api_key_env"] = [&](const Values& v) { ep.api_key_env = one("provider.api_key_env", v); };
    set["provider.chat_model_id"] = [&](const Values& v) { ep.chat_model_id = one("provider.chat_model_id", v); };
    set["provider.label_model_id"] = [&](const Values& v) { ep.label_model_id = one("provider.label_model_id", v); };
    set["provider.embed_model_id"] = [&](const Values& v) { ep.embed_model_id = one("provider.embed_model_id", v); };
    set["provider.timeout_seconds"] = [&](const Values& v) { ep.timeout_seconds = real("provider.timeout_seconds", v); };
    set["provider.max_in_flight"] = [&](const Values& v) { ep.max_in_flight = integer<std::size_t>("provider.max_in_flight", v); };
    set["provider.embed_batch_size"] = [&](const Values& v) {
        ep.embed_batch_size = integer<std::size_t>("provider.embed_batch_size", v);
    };
    set["provider.max_tokens"] = [&](const Values& v) { ep.max_tokens = integer<int>("provider.max_tokens", v); };
    set["provider.instruction_template"] = [&](const Values& v) {
        ep.instruction_template = one("provider.instruction_template", v);
    };
    set["provider.retry_max_attempts"] = [&](const Values& v) {
        ep.retry.max_attempts = integer<int>("provider.retry_max_attempts", v);
    };
    set["provider.retry_base_delay_ms"] = [&](const Values& v) {
        ep.retry.base_delay = std::chrono::milliseconds(integer<long>("provider.retry_base_delay_ms", v));
    };
    set["provider.retry_max_delay_ms"] = [&](const Values& v) {
        ep.retry.max_delay = std::chrono::milliseconds(integer<long>("provider.retry_max_delay_ms", v));
    };
    set["provider.mock_seed"] = [&](const Values& v) { cfg.provider.mock.seed = integer<std::uint64_t>("provider.mock_seed", v); };
    set["provider.mock_dimension"] = [&](const Values& v) {
        cfg.provider.mock.dimension = integer<std::size_t>("provider.mock_dimension", v);
    };
    set["provider.mock_noise_scale"] = [&](const Values& v) {
        cfg.provider.mock.noise_scale = real("provider.mock_noise_scale", v);
    };

    set["filter.reformat_retries"] = [&](const Values& v) { cfg.reformat_retries = integer<int>("filter.reformat_retries", v); };
    set["filter.prompts_dir"] = [&](const Values& v) { cfg.prompts_dir = resolve(base_dir, one("filter.prompts_dir", v)); };

    set["embed.instruction"] = [&](const Values& v) { cfg.instruction = one("embed.instruction", v); };

    layout_keys(set, "manifold", cfg.layout5d);
    layout_keys(set, "plot_layout", cfg.layout2d);

    set["density.min_samples"] = [&](const Values& v) { cfg.min_samples = integer<std::size_t>("density.min_samples", v); };
    set["density.allow_single_cluster"] = [&](const Values& v) {
        cfg.allow_single_cluster = boolean("density.allow_single_cluster", v);
    };
    set["sweep.candidates"] = [&](const Values& v) { cfg.candidates = integer_list("sweep.candidates", v); };

    auto& lab = cfg.labeling;
    set["labeling.top_n"] = [&](const Values& v) { lab.top_n = integer<std::size_t>("labeling.top_n", v); };
    set["labeling.min_count"] = [&](const Values& v) { lab.min_count = integer<std::size_t>("labeling.min_count", v); };
    set["labeling.representative_docs"] = [&](const Values& v) {
        lab.representative_docs = integer<std::size_t>("labeling.representative_docs", v);
    };
    set["labeling.use_stopwords"] = [&](const Values& v) { lab.use_stopwords = boolean("labeling.use_stopwords", v); };
    set["labeling.stopwords_dir"] = [&](const Values& v) {
        lab.stopwords_dir = resolve(base_dir, one("labeling.stopwords_dir", v));
    };

    auto& au = cfg.audit;
    set["audit.bind"] = [&](const Values& v) { au.bind = one("audit.bind", v); };
    set["audit.port"] = [&](const Values& v) { au.port = integer<int>("audit.port", v); };
    set["audit.token_env"] = [&](const Values& v) { au.token_env = one("audit.token_env", v); };
    set["audit.static_dir"] = [&](const Values& v) { au.static_dir = resolve(base_dir, one("audit.static_dir", v)); };
    set["audit.n_per_class"] = [&](const Values& v) { au.n_per_class = integer<std::size_t>("audit.n_per_class", v); };
    set["audit.seed"] = [&](const Values& v) { au.seed = integer<std::uint64_t>("audit.seed", v); };

    std::istringstream in(text);
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(std::string("malformed configuration: ") + e.what());
    }
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        std::string key;
        for (const auto& p : item.parents) key += p + ".";
        key += item.name;
        auto it = set.find(key);
        if (it == set.end()) throw ConfigError("unknown configuration key: " + key);
        it->second(item.inputs);
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw ConfigError("configuration file not found: " + path.string());
    return parse_config(read_file(path), path.parent_path());
}

inline nlohmann::json layout_to_json(const manifold::LayoutConfig& c) {
    return {{"n_components", c.n_components}, {"n_neighbors", c.n_neighbors},
            {"min_dist", c.min_dist},         {"spread", c.spread},
            {"n_epochs", c.n_epochs},         {"learning_rate", c.learning_rate},
            {"negative_sample_rate", c.negative_sample_rate},
            {"seed", c.seed},                 {"deterministic", c.deterministic},
            {"metric", c.metric == manifold::Metric::cosine ? "cosine" : "euclidean"},
            {"exact_knn_threshold", c.knn.exact_threshold}};
}

/// Snapshot recorded in the run manifest. Secrets are never present: only the key's variable name.
inline nlohmann::json to_json(const RunConfig& c) {
    const auto& ep = c.provider.endpoint;
    return {
        {"run_id", c.run_id},
        {"corpus",
         {{"source", c.corpus.source},
          {"path", c.corpus.path.string()},
          {"format", c.corpus.format == corpus::Format::jsonl ? "jsonl" : "csv"},
          {"synthetic",
           {{"n_narratives", c.corpus.synthetic.n_narratives},
            {"posts_per_narrative", c.corpus.synthetic.posts_per_narrative},
            {"distractor_fraction", c.corpus.synthetic.distractor_fraction},
            {"seed", c.corpus.synthetic.seed}}}}},
        {"provider",
         {{"kind", c.provider.kind},
          {"base_url", ep.base_url},
          {"api_key_env", ep.api_key_env},
          {"chat_model_id", ep.chat_model_id},
          {"label_model_id", ep.label_model_id},
          {"embed_model_id", ep.embed_model_id},
          {"instruction_template", ep.instruction_template},
          {"max_tokens", ep.max_tokens},
          {"mock", {{"seed", c.provider.mock.seed},
                    {"dimension", c.provider.mock.dimension},
                    {"noise_scale", c.provider.mock.noise_scale}}}}},
        {"filter", {{"reformat_retries", c.reformat_retries}, {"prompts_dir", c.prompts_dir.string()}}},
        {"instruction", c.instruction},
        {"manifold", layout_to_json(c.layout5d)},
        {"plot_layout", layout_to_json(c.layout2d)},
        {"density", {{"min_samples", c.min_samples}, {"allow_single_cluster", c.allow_single_cluster}}},
        {"sweep", {{"candidates", c.candidates}}},
        {"labeling",
         {{"top_n", c.labeling.top_n},
          {"min_count", c.labeling.min_count},
          {"representative_docs", c.labeling.representative_docs},
          {"use_stopwords", c.labeling.use_stopwords},
          {"stopwords_dir", c.labeling.stopwords_dir.string()}}},
    };
}

/// Transport for the configured provider.
inline std::shared_ptr<llm::Transport> make_transport(const RunConfig& c) {
    if (c.provider.kind == "mock") return std::make_shared<llm::MockProvider>(c.provider.mock);
    const auto& ep = c.provider.endpoint;
    return std::make_shared<llm::HttpTransport>(ep.base_url, ep.api_key(), ep.timeout_seconds);
}

} // namespace narrative::config
