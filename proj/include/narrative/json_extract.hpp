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

#include <nlohmann/json.hpp>

#include <initializer_list>
#include <string>
#include <string_view>

namespace narrative::llm {

class JsonExtractError : public Error {
public:
    enum class Kind { no_object, parse_failure, missing_key };

    JsonExtractError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

namespace detail {

/// Drops a reasoning preamble: everything up to the last `</think>`, or an unclosed `<think>` tail.
inline std::string_view strip_reasoning(std::string_view text) {
    constexpr std::string_view open = "<think>";
    constexpr std::string_view close = "</think>";
    if (auto end = text.rfind(close); end != std::string_view::npos) {
        return text.substr(end + close.size());
    }
    if (auto start = text.find(open); start != std::string_view::npos) {
        return text.substr(0, start);
    }
    return text;
}

/// End offset (exclusive) of the balanced object starting at `start`, or npos.
inline std::size_t balanced_end(std::string_view text, std::size_t start) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i + 1;
        }
    }
    return std::string_view::npos;
}

} // namespace detail

/**
 * Pulls the first balanced top-level JSON object out of a model response.
 *
 * Reasoning blocks (`<think>...</think>`) are removed first. Code fences need
 * no special handling: fence lines carry no braces, so the scan skips them.
 * If the first balanced region fails to parse, later regions are tried.
 */
inline nlohmann::json extract_json_object(std::string_view text,
                                          std::initializer_list<std::string_view> required_keys = {}) {
    const std::string_view body = detail::strip_reasoning(text);
    bool saw_candidate = false;
    for (std::size_t pos = body.find('{'); pos != std::string_view::npos; pos = body.find('{', pos + 1)) {
        const auto end = detail::balanced_end(body, pos);
        if (end == std::string_view::npos) break;
        saw_candidate = true;
        auto parsed = nlohmann::json::parse(body.substr(pos, end - pos), nullptr, false);
        if (parsed.is_discarded() || !parsed.is_object()) continue;
        for (auto key : required_keys) {
            if (!parsed.contains(key)) {
                throw JsonExtractError(JsonExtractError::Kind::missing_key,
                                       "JSON object lacks required key '" + std::string(key) + "'");
            }
        }
        return parsed;
    }
    if (saw_candidate) {
        throw JsonExtractError(JsonExtractError::Kind::parse_failure, "balanced region is not valid JSON");
    }
    throw JsonExtractError(JsonExtractError::Kind::no_object, "no balanced JSON object in response");
}

} // namespace narrative::llm
