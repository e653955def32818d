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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

/**
 * @file corpus.hpp
 *
 * @brief Post records: loading (JSONL / CSV), serialization, deduplication
 * and a seeded synthetic corpus generator with planted narratives.
 */

namespace narrative::corpus {

enum class Platform { x, reddit, telegram, synthetic };

inline std::string_view to_string(Platform p) noexcept {
    switch (p) {
    case Platform::x: return "x";
    case Platform::reddit: return "reddit";
    case Platform::telegram: return "telegram";
    case Platform::synthetic: return "synthetic";
    }
    return "synthetic";
}

inline std::optional<Platform> parse_platform(std::string_view s) noexcept {
    if (s == "x" || s == "twitter") return Platform::x;
    if (s == "reddit") return Platform::reddit;
    if (s == "telegram") return Platform::telegram;
    if (s == "synthetic") return Platform::synthetic;
    return std::nullopt;
}

struct Post {
    std::string id;
    Platform platform = Platform::synthetic;
    std::string text;
    std::string lang;
    std::optional<std::string> timestamp; ///< ISO-8601, UTC.
    std::optional<std::string> author_ref;

    bool operator==(const Post&) const = default;
};

enum class Format { jsonl, csv };

inline Format parse_format(std::string_view s) {
    if (s == "jsonl") return Format::jsonl;
    if (s == "csv") return Format::csv;
    throw InvalidArgument("unsupported corpus format '" + std::string(s) + "'");
}

struct LoadReport {
    std::vector<Post> posts;
    std::size_t records = 0; ///< Non-blank records seen.
    std::size_t skipped = 0;
};

/// Maximum tolerated fraction of malformed records before a load is rejected.
inline constexpr double kMaxSkipRatio = 0.10;

namespace detail {

inline bool is_digits(std::string_view s) {
    for (char c : s) {
        if (c < '0' || c > '9') return false;
    }
    return !s.empty();
}

/// Accepts YYYY-MM-DDTHH:MM:SS[.fff](Z|±HH:MM).
inline bool looks_like_iso8601(std::string_view s) {
    if (s.size() < 20) return false;
    if (!is_digits(s.substr(0, 4)) || s[4] != '-' || !is_digits(s.substr(5, 2)) || s[7] != '-' ||
        !is_digits(s.substr(8, 2)) || (s[10] != 'T' && s[10] != ' ') || !is_digits(s.substr(11, 2)) ||
        s[13] != ':' || !is_digits(s.substr(14, 2)) || s[16] != ':' || !is_digits(s.substr(17, 2))) {
        return false;
    }
    std::size_t i = 19;
    if (i < s.size() && s[i] == '.') {
        ++i;
        const auto start = i;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
        if (i == start) return false;
    }
    auto zone = s.substr(i);
    if (zone == "Z") return true;
    return zone.size() == 6 && (zone[0] == '+' || zone[0] == '-') && is_digits(zone.substr(1, 2)) &&
           zone[3] == ':' && is_digits(zone.substr(4, 2));
}

/// Field map for one record; std::nullopt marks a malformed record.
using Fields = std::map<std::string, std::string, std::less<>>;

inline std::optional<Post> post_from_fields(const Fields& f) {
    auto get = [&](std::string_view key) -> const std::string* {
        auto it = f.find(key);
        return it == f.end() ? nullptr : &it->second;
    };
    const auto* id = get("id");
    const auto* platform = get("platform");
    const auto* text = get("text");
    const auto* lang = get("lang");
    if (!id || !platform || !text || !lang) return std::nullopt;
    if (trim(*id).empty() || trim(*text).empty() || trim(*lang).empty()) return std::nullopt;
    auto p = parse_platform(*platform);
    if (!p) return std::nullopt;
    Post post{*id, *p, *text, *lang, std::nullopt, std::nullopt};
    if (const auto* ts = get("timestamp"); ts && !ts->empty()) {
        if (!looks_like_iso8601(*ts)) return std::nullopt;
        post.timestamp = *ts;
    }
    if (const auto* a = get("author_ref"); a && !a->empty()) {
        post.author_ref = *a;
    }
    return post;
}

inline std::optional<Post> post_from_json_line(std::string_view line) {
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    Fields f;
    for (auto& [k, v] : j.items()) {
        if (v.is_string()) {
            f.emplace(k, v.get<std::string>());
        } else if (!v.is_null()) {
            // Only the optional fields may be null; any other type is malformed.
            return std::nullopt;
        }
    }
    return post_from_fields(f);
}

/**
 * RFC 4180 reader: quoted fields may contain separators, doubled quotes and newlines.
 * Returns rows; a row with an unterminated quote is returned with `ok = false`.
 */
struct CsvRow {
    std::vector<std::string> cells;
    bool ok = true;
};

inline std::vector<CsvRow> parse_csv(std::string_view text) {
    std::vector<CsvRow> rows;
    CsvRow row;
    std::string cell;
    bool in_quotes = false;
    bool row_has_content = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cell.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                cell.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            in_quotes = true;
            row_has_content = true;
            break;
        case ',':
            row.cells.push_back(std::move(cell));
            cell.clear();
            row_has_content = true;
            break;
        case '\r':
            break;
        case '\n':
            if (row_has_content || !cell.empty()) {
                row.cells.push_back(std::move(cell));
                rows.push_back(std::move(row));
            }
            row = {};
            cell.clear();
            row_has_content = false;
            break;
        default:
            cell.push_back(c);
            row_has_content = true;
        }
    }
    if (in_quotes) {
        row.cells.push_back(std::move(cell));
        row.ok = false;
        rows.push_back(std::move(row));
    } else if (row_has_content || !cell.empty()) {
        row.cells.push_back(std::move(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string csv_escape(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

} // namespace detail

/**
 * Reads a post file. Malformed records (bad JSON, missing or empty required
 * fields, unknown platform, bad timestamp, duplicate id) are skipped and counted.
 *
 * @throws IoError if the file is unreadable.
 * @throws FormatError if more than 10% of records are malformed, or a CSV header is missing.
 */
inline LoadReport load_posts(const std::filesystem::path& path, Format format) {
    const std::string content = read_file(path);
    LoadReport report;
    std::unordered_set<std::string> seen;
    auto accept = [&](std::optional<Post> p) {
        ++report.records;
        if (!p || !seen.insert(p->id).second) {
            ++report.skipped;
            return;
        }
        report.posts.push_back(std::move(*p));
    };

    if (format == Format::jsonl) {
        std::istringstream in(content);
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            accept(detail::post_from_json_line(line));
        }
    } else {
        auto rows = detail::parse_csv(content);
        if (rows.empty()) {
            throw FormatError("CSV corpus has no header row: " + path.string());
        }
        const auto& header = rows.front().cells;
        for (std::string_view required : {"id", "platform", "text", "lang"}) {
            if (std::find(header.begin(), header.end(), required) == header.end()) {
                throw FormatError("CSV header lacks column '" + std::string(required) + "'");
            }
        }
        for (std::size_t r = 1; r < rows.size(); ++r) {
            const auto& row = rows[r];
            if (!row.ok || row.cells.size() != header.size()) {
                accept(std::nullopt);
                continue;
            }
            detail::Fields f;
            for (std::size_t c = 0; c < header.size(); ++c) f.emplace(header[c], row.cells[c]);
            accept(detail::post_from_fields(f));
        }
    }

    if (report.records > 0 &&
        static_cast<double>(report.skipped) / static_cast<double>(report.records) > kMaxSkipRatio) {
        throw FormatError("skip threshold exceeded: " + std::to_string(report.skipped) + " of " +
                          std::to_string(report.records) + " records malformed in " + path.string());
    }
    return report;
}

inline nlohmann::json to_json(const Post& p) {
    nlohmann::json j{{"id", p.id}, {"platform", to_string(p.platform)}, {"text", p.text}, {"lang", p.lang}};
    if (p.timestamp) j["timestamp"] = *p.timestamp;
    if (p.author_ref) j["author_ref"] = *p.author_ref;
    return j;
}

inline std::string serialize_posts(std::span<const Post> posts, Format format) {
    std::string out;
    if (format == Format::jsonl) {
        for (const auto& p : posts) {
            out += to_json(p).dump();
            out.push_back('\n');
        }
        return out;
    }
    out = "id,platform,text,lang,timestamp,author_ref\n";
    for (const auto& p : posts) {
        out += detail::csv_escape(p.id) + ',' + std::string(to_string(p.platform)) + ',' +
               detail::csv_escape(p.text) + ',' + detail::csv_escape(p.lang) + ',' +
               detail::csv_escape(p.timestamp.value_or("")) + ',' +
               detail::csv_escape(p.author_ref.value_or("")) + '\n';
    }
    return out;
}

inline void save_posts(const std::filesystem::path& path, std::span<const Post> posts,
                       Format format = Format::jsonl) {
    write_file_atomic(path, serialize_posts(posts, format));
}

/// Trim plus collapse of internal whitespace runs to one space. Case is preserved.
inline std::string normalize_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : trim(text)) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            pending_space = true;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(c);
    }
    return out;
}

/// Drops posts whose normalized text was already seen; first occurrence wins, order is stable.
inline std::vector<Post> dedupe(std::span<const Post> posts) {
    std::unordered_set<std::string> seen;
    std::vector<Post> out;
    out.reserve(posts.size());
    for (const auto& p : posts) {
        if (seen.insert(normalize_text(p.text)).second) {
            out.push_back(p);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SynthSpec {
    std::size_t n_narratives = 5;
    std::size_t posts_per_narrative = 600;
    double distractor_fraction = 0.5;
    std::uint64_t seed = 1;
};

/// Ground-truth value for a distractor post.
inline constexpr int kDistractor = -1;

/// post id -> planted narrative index, or kDistractor.
using GroundTruth = std::map<std::string, int>;

struct SynthCorpus {
    std::vector<Post> posts;
    GroundTruth truth;
};

/// The marker token the mock provider keys on.
inline std::string narrative_marker(std::size_t i) { return "[[N" + std::to_string(i) + "]]"; }

namespace detail {

struct NarrativeTheme {
    std::vector<std::string_view> claims;
    std::vector<std::string_view> enemies;
    std::vector<std::string_view> angles;
};

inline const std::vector<NarrativeTheme>& narrative_themes() {
    static const std::vector<NarrativeTheme> themes = {
        {{"they let violent migrants in", "our children are no longer safe", "crime is covered up by officials"},
         {"the government", "the interior ministry", "open-border elites"},
         {"on purpose to replace us", "and the media hides it", "as part of a deliberate plan"}},
        {{"we are paying for a proxy war", "peace talks are blocked", "sanctions only hurt ordinary people"},
         {"Western elites", "arms lobbyists", "the chancellor's circle"},
         {"while profiting from the bloodshed", "to please their masters abroad", "and sacrifice our prosperity"}},
        {{"the vaccines were never tested", "health authorities lied to us", "side effects are being hidden"},
         {"pharma corporations", "the health minister", "global health bureaucrats"},
         {"to sell out the population", "for profit and control", "in a coordinated cover-up"}},
        {{"the climate laws will make us poor", "heating bans are coming", "energy prices are exploding"},
         {"the Green party", "globalist climate planners", "the economy ministry"},
         {"to build a climate dictatorship", "to control every citizen", "deliberately wrecking industry"}},
        {{"the election will be rigged", "every party except one is bought", "the media silences the opposition"},
         {"the deep state", "the old parties", "mainstream journalists"},
         {"to keep the real savior from power", "betraying the citizens again", "as foreign puppets"}},
    };
    return themes;
}

inline const std::vector<std::string_view>& distractor_templates() {
    static const std::vector<std::string_view> t = {
        "I think the budget plan for {topic} is poorly thought out and needs revision",
        "Honestly my rent went up again and {topic} did nothing to help",
        "The minister's answer on {topic} in parliament yesterday was unconvincing",
        "Can someone explain how the new rules on {topic} affect small businesses",
        "I disagree with the coalition on {topic}, but I respect the debate",
        "Prices at the supermarket are frustrating, {topic} feels like an afterthought",
        "Good interview today about {topic}, both sides made fair points",
        "Skeptical that the {topic} reform will deliver what was promised",
    };
    return t;
}

inline const std::vector<std::string_view>& distractor_topics() {
    static const std::vector<std::string_view> t = {"public transport", "pensions",   "school funding",
                                                    "digitalization",   "tax policy", "housing",
                                                    "rail strikes",     "bureaucracy"};
    return t;
}

} // namespace detail

/**
 * Generates a seeded corpus: `n_narratives` groups of `posts_per_narrative`
 * posts carrying the marker "[[N{i}]]", followed by benign distractors making
 * up `distractor_fraction` of the final corpus. Texts are unique.
 *
 * @throws InvalidArgument if distractor_fraction is outside [0, 1).
 */
inline SynthCorpus generate_synthetic(const SynthSpec& spec) {
    if (!(spec.distractor_fraction >= 0.0) || spec.distractor_fraction >= 1.0) {
        throw InvalidArgument("distractor_fraction must lie in [0, 1)");
    }
    const std::size_t planted = spec.n_narratives * spec.posts_per_narrative;
    const auto n_distractors = static_cast<std::size_t>(std::llround(
        spec.distractor_fraction * static_cast<double>(planted) / (1.0 - spec.distractor_fraction)));

    Rng rng(spec.seed);
    SynthCorpus out;
    out.posts.reserve(planted + n_distractors);
    std::size_t serial = 0;
    auto next_id = [&] {
        std::string s = std::to_string(serial++);
        return "syn-" + std::string(s.size() < 7 ? 7 - s.size() : 0, '0') + s;
    };
    auto pick = [&](const std::vector<std::string_view>& v) { return v[rng.below(v.size())]; };

    const auto& themes = detail::narrative_themes();
    for (std::size_t i = 0; i < spec.n_narratives; ++i) {
        const auto& theme = themes[i % themes.size()];
        for (std::size_t j = 0; j < spec.posts_per_narrative; ++j) {
            Post p;
            p.id = next_id();
            p.platform = Platform::synthetic;
            p.lang = "en";
            p.text = narrative_marker(i) + " " + std::string(pick(theme.claims)) + ", " +
                     std::string(pick(theme.enemies)) + " act " + std::string(pick(theme.angles)) +
                     ". #share" + std::to_string(j);
            out.truth.emplace(p.id, static_cast<int>(i));
            out.posts.push_back(std::move(p));
        }
    }
    for (std::size_t j = 0; j < n_distractors; ++j) {
        std::string text(pick(detail::distractor_templates()));
        const auto topic = pick(detail::distractor_topics());
        text.replace(text.find("{topic}"), 7, topic);
        Post p;
        p.id = next_id();
        p.platform = Platform::synthetic;
        p.lang = "en";
        p.text = text + " (note " + std::to_string(j) + ")";
        out.truth.emplace(p.id, kDistractor);
        out.posts.push_back(std::move(p));
    }
    return out;
}

} // namespace narrative::corpus
