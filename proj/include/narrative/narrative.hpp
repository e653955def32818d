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
#include "density.hpp"
#include "llm_gateway.hpp"
#include "parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

/**
 * @file narrative.hpp
 *
 * @brief Cluster keywords (class-based TF-IDF) and one-sentence narrative labels.
 */

namespace narrative::labeling {

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

namespace detail {

/// Decodes one code point; malformed sequences yield U+FFFD and advance one byte.
inline char32_t next_code_point(std::string_view s, std::size_t& i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    auto cont = [&](std::size_t k) -> int {
        if (i + k >= s.size()) return -1;
        const auto b = static_cast<unsigned char>(s[i + k]);
        return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
    };
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int len = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        ++i;
        return 0xFFFD;
    }
    for (int k = 1; k < len; ++k) {
        const int c = cont(static_cast<std::size_t>(k));
        if (c < 0) {
            ++i;
            return 0xFFFD;
        }
        cp = (cp << 6) | static_cast<char32_t>(c);
    }
    i += static_cast<std::size_t>(len);
    return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

/// Letters and digits, approximated by script ranges.
constexpr bool is_word_code_point(char32_t c) noexcept {
    if (c < 0x80) return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
    if (c == 0xAA || c == 0xB5 || c == 0xBA) return true;
    if (c < 0xC0 || c == 0xD7 || c == 0xF7) return false;
    if (c <= 0x2AF) return true;                 // Latin-1 letters, Latin Extended-A/B, IPA
    if (c >= 0x370 && c <= 0x3FF) return c != 0x37E && c != 0x387 && c != 0x375;
    if (c >= 0x400 && c <= 0x52F) return c < 0x482 || c > 0x489;
    if (c >= 0x1E00 && c <= 0x1FFF) return true; // Latin Extended Additional, Greek Extended
    if (c >= 0x2000 && c <= 0x2BFF) return false; // punctuation, symbols, arrows
    if (c >= 0x3000 && c <= 0x303F) return false;
    if (c >= 0xFE00 && c <= 0xFE6F) return false;
    if (c >= 0xFF00 && c <= 0xFF0F) return false;
    if (c >= 0x1F000) return false;               // emoji and pictographs
    return c != 0xFFFD && c >= 0x530;
}

constexpr char32_t to_lower(char32_t c) noexcept {
    if (c >= 'A' && c <= 'Z') return c + 32;
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
    if (c >= 0x100 && c <= 0x137) return c | 1;
    if (c >= 0x139 && c <= 0x148) return (c & 1) ? c + 1 : c;
    if (c >= 0x14A && c <= 0x177) return c | 1;
    if (c == 0x178) return 0xFF;
    if (c >= 0x179 && c <= 0x17E) return (c & 1) ? c + 1 : c;
    if (c == 0x386) return 0x3AC;
    if (c >= 0x388 && c <= 0x38A) return c + 37;
    if (c == 0x38C) return 0x3CC;
    if (c == 0x38E || c == 0x38F) return c + 63;
    if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 32;
    if (c >= 0x400 && c <= 0x40F) return c + 80;
    if (c >= 0x410 && c <= 0x42F) return c + 32;
    return c;
}

} // namespace detail

/// Lowercased word tokens of at least `min_length` code points.
inline std::vector<std::string> tokenize(std::string_view text, std::size_t min_length = 2) {
    std::vector<std::string> out;
    std::string current;
    std::size_t length = 0;
    auto flush = [&] {
        if (length >= min_length) out.push_back(current);
        current.clear();
        length = 0;
    };
    for (std::size_t i = 0; i < text.size();) {
        const char32_t cp = detail::next_code_point(text, i);
        if (detail::is_word_code_point(cp)) {
            detail::append_utf8(current, detail::to_lower(cp));
            ++length;
        } else {
            flush();
        }
    }
    flush();
    return out;
}

// ---------------------------------------------------------------------------
// Stopwords
// ---------------------------------------------------------------------------

using StopwordLists = std::map<std::string, std::set<std::string>>;

inline const StopwordLists& default_stopwords() {
    static const StopwordLists lists = {
        {"en",
         {"a",     "about", "after", "again",  "all",   "also",  "am",    "an",    "and",   "any",   "are",
          "as",    "at",    "be",    "because", "been", "before", "being", "but",  "by",    "can",   "could",
          "did",   "do",    "does",  "doing",  "down",  "during", "each", "few",   "for",   "from",  "further",
          "had",   "has",   "have",  "having", "he",    "her",   "here",  "hers",  "him",   "his",   "how",
          "if",    "in",    "into",  "is",     "it",    "its",   "just",  "me",    "more",  "most",  "my",
          "no",    "nor",   "not",   "now",    "of",    "off",   "on",    "once",  "only",  "or",    "other",
          "our",   "ours",  "out",   "over",   "own",   "same",  "she",   "should", "so",   "some",  "such",
          "than",  "that",  "the",   "their",  "theirs", "them", "then",  "there", "these", "they",  "this",
          "those", "through", "to",  "too",    "under", "until", "up",    "very",  "was",   "we",    "were",
          "what",  "when",  "where", "which",  "while", "who",   "whom",  "why",   "will",  "with",  "would",
          "you",   "your",  "yours"}},
        {"de",
         {"aber",   "alle",   "allem",  "allen",  "aller",  "alles",  "als",    "also",   "am",     "an",
          "ander",  "andere", "anderem", "anderen", "anderer", "anderes", "auch", "auf",    "aus",    "bei",
          "bin",    "bis",    "bist",   "da",     "damit",  "dann",   "das",    "dass",   "dein",   "deine",
          "dem",    "den",    "denn",   "der",    "des",    "dich",   "die",    "dies",   "diese",  "diesem",
          "diesen", "dieser", "dieses", "dir",    "doch",   "dort",   "du",     "durch",  "ein",    "eine",
          "einem",  "einen",  "einer",  "eines",  "er",     "es",     "euch",   "euer",   "für",    "hat",
          "hatte",  "hier",   "hin",    "ich",    "ihm",    "ihn",    "ihnen",  "ihr",    "ihre",   "im",
          "in",     "ist",    "ja",     "jede",   "jedem",  "jeden",  "jeder",  "jedes",  "kann",   "kein",
          "keine",  "man",    "mein",   "meine",  "mich",   "mir",    "mit",    "muss",   "nach",   "nicht",
          "nichts", "noch",   "nun",    "nur",    "ob",     "oder",   "ohne",   "sehr",   "sein",   "seine",
          "sich",   "sie",    "sind",   "so",     "soll",   "um",     "und",    "uns",    "unser",  "unsere",
          "unter",  "viel",   "vom",    "von",    "vor",    "war",    "waren",  "was",    "weil",   "wenn",
          "wer",    "wie",    "wieder", "will",   "wir",    "wird",   "wo",     "zu",     "zum",    "zur",
          "über"}},
    };
    return lists;
}

/// One word per line; blank lines and lines starting with '#' are ignored.
inline std::set<std::string> parse_stopword_file(std::string_view content) {
    std::set<std::string> out;
    std::size_t start = 0;
    while (start <= content.size()) {
        auto end = content.find('\n', start);
        if (end == std::string_view::npos) end = content.size();
        const auto word = trim(content.substr(start, end - start));
        if (!word.empty() && word.front() != '#') out.emplace(word);
        start = end + 1;
    }
    return out;
}

/// Lists from `<dir>/<lang>.txt`, falling back to the built-in list per language.
inline StopwordLists load_stopwords(const std::filesystem::path& dir) {
    StopwordLists lists = default_stopwords();
    if (!std::filesystem::is_directory(dir)) return lists;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".txt") continue;
        lists[entry.path().stem().string()] = parse_stopword_file(read_file(entry.path()));
    }
    return lists;
}

// ---------------------------------------------------------------------------
// c-TF-IDF
// ---------------------------------------------------------------------------

struct Document {
    std::string text;
    std::string lang; ///< Selects the stopword list; empty means none.
};

struct KeywordOptions {
    std::size_t top_n = 10;
    std::size_t min_count = 3;  ///< Corpus-wide occurrences required; 0 or 1 disables the filter.
    std::size_t min_length = 2; ///< In code points.
    bool use_stopwords = true;
    StopwordLists stopwords = default_stopwords();
};

struct ClusterKeywords {
    int cluster_id = 0;
    std::vector<std::pair<std::string, double>> terms; ///< Descending weight, ties lexicographic.
};

/**
 * Term statistics over clustered documents.
 *
 * W(t, c) = tf(t, c) * ln(1 + A / f(t)), where tf counts t in cluster c, f(t)
 * counts t over all clusters, and A is the mean number of (retained) tokens per cluster.
 */
class CtfidfModel {
public:
    CtfidfModel(const std::map<int, std::vector<Document>>& docs_by_cluster, const KeywordOptions& opts) {
        if (docs_by_cluster.empty()) throw InvalidArgument("c-TF-IDF needs at least one cluster");
        std::map<int, std::unordered_map<std::string, std::size_t>> raw;
        std::unordered_map<std::string, std::size_t> totals;
        for (const auto& [cluster, docs] : docs_by_cluster) {
            if (docs.empty()) throw InvalidArgument("cluster " + std::to_string(cluster) + " has no documents");
            auto& counts = raw[cluster];
            for (const auto& d : docs) {
                const std::set<std::string>* stop = nullptr;
                if (opts.use_stopwords) {
                    if (auto it = opts.stopwords.find(d.lang); it != opts.stopwords.end()) stop = &it->second;
                }
                for (auto& tok : tokenize(d.text, opts.min_length)) {
                    if (stop && stop->count(tok)) continue;
                    ++counts[tok];
                    ++totals[tok];
                }
            }
        }
        for (const auto& [term, f] : totals) {
            if (f >= opts.min_count) f_.emplace(term, f);
        }
        if (f_.empty()) throw Error("c-TF-IDF vocabulary is empty after filtering");
        std::size_t kept = 0;
        for (auto& [cluster, counts] : raw) {
            auto& tf = tf_[cluster];
            for (auto& [term, n] : counts) {
                if (f_.count(term)) {
                    tf.emplace(term, n);
                    kept += n;
                }
            }
        }
        mean_tokens_ = static_cast<double>(kept) / static_cast<double>(raw.size());
    }

    [[nodiscard]] double weight(const std::string& term, int cluster) const {
        auto c = tf_.find(cluster);
        auto f = f_.find(term);
        if (c == tf_.end() || f == f_.end()) return 0.0;
        auto t = c->second.find(term);
        if (t == c->second.end()) return 0.0;
        return static_cast<double>(t->second) *
               std::log(1.0 + mean_tokens_ / static_cast<double>(f->second));
    }

    [[nodiscard]] ClusterKeywords top(int cluster, std::size_t n) const {
        ClusterKeywords out{cluster, {}};
        auto c = tf_.find(cluster);
        if (c == tf_.end()) return out;
        for (const auto& [term, count] : c->second) out.terms.emplace_back(term, weight(term, cluster));
        std::sort(out.terms.begin(), out.terms.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        if (out.terms.size() > n) out.terms.resize(n);
        return out;
    }

    [[nodiscard]] double mean_tokens() const noexcept { return mean_tokens_; }
    [[nodiscard]] std::size_t vocabulary_size() const noexcept { return f_.size(); }
    [[nodiscard]] std::size_t corpus_count(const std::string& term) const {
        auto it = f_.find(term);
        return it == f_.end() ? 0 : it->second;
    }

private:
    std::map<int, std::unordered_map<std::string, std::size_t>> tf_;
    std::unordered_map<std::string, std::size_t> f_;
    double mean_tokens_ = 0.0;
};

/// Top terms per cluster, in cluster id order.
inline std::vector<ClusterKeywords> ctfidf_keywords(const std::map<int, std::vector<Document>>& docs_by_cluster,
                                                    const KeywordOptions& opts = {}) {
    const CtfidfModel model(docs_by_cluster, opts);
    std::vector<ClusterKeywords> out;
    for (const auto& [cluster, docs] : docs_by_cluster) out.push_back(model.top(cluster, opts.top_n));
    return out;
}

// ---------------------------------------------------------------------------
// Labeling
// ---------------------------------------------------------------------------

/**
 * Indices (into `members`' referents) of the `n` members nearest the cluster
 * centroid in layout space, nearest first; ties by post id.
 */
inline std::vector<std::size_t> representative_docs(const Matrix& layout, std::span<const std::size_t> members,
                                                    std::span<const std::string> post_ids, std::size_t n = 8) {
    if (members.empty()) throw InvalidArgument("representative_docs needs a non-empty cluster");
    std::vector<double> centroid(layout.cols(), 0.0);
    for (auto m : members) {
        for (std::size_t d = 0; d < layout.cols(); ++d) centroid[d] += layout(m, d);
    }
    for (double& x : centroid) x /= static_cast<double>(members.size());
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(members.size());
    for (auto m : members) ranked.emplace_back(squared_euclidean(layout.row(m), centroid), m);
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return post_ids[a.second] < post_ids[b.second];
    });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(n, ranked.size()); ++i) out.push_back(ranked[i].second);
    return out;
}

inline constexpr std::string_view kLabelPrefix = "LABEL: ";
inline constexpr std::string_view kDocOpen = "<<<DOC";
inline constexpr std::string_view kDocClose = "DOC>>>";

inline std::string default_label_system_prompt() {
    return "You are an AI threat intelligence and FIMI analyst.\n\n"
           "A strategic narrative, in the manipulative sense used here, is a storyline that collapses "
           "uncertainty into a malicious plot: events are explained as the deliberate doing of a hidden "
           "or hostile actor, and the audience is pushed toward distrust or hostility.\n\n"
           "You receive the keywords of one cluster of social media posts and a sample of its posts. "
           "Work in three steps:\n"
           "Step 1: state the core claim the posts share.\n"
           "Step 2: name the enemy the posts blame.\n"
           "Step 3: describe the specific manipulative angle that links the claim to the enemy.\n"
           "Then give a one-sentence narrative label of the form \"<Short title>: <sentence>\".\n\n"
           "Few-shot calibration:\n"
           "Keywords: sanctions, gas, heating, prices, washington, freezing\n"
           "Step 1: sanctions are making heating unaffordable.\n"
           "Step 2: the national government acting for a foreign power.\n"
           "Step 3: economic hardship is framed as a deliberate sacrifice of citizens.\n"
           "LABEL: Economic Betrayal: The government deliberately impoverishes its own citizens to serve "
           "foreign interests.\n\n"
           "Your final line must be the label, prefixed exactly with \"LABEL: \". Write nothing after it.";
}

/**
 * Label prompt: instructions in the system message, the cluster evidence
 * (keywords, then delimited posts) in the user message.
 */
inline llm::ChatRequest build_label_prompt(const ClusterKeywords& keywords, std::span<const std::string> docs,
                                           const std::string& system_prompt = default_label_system_prompt()) {
    if (keywords.terms.empty()) throw InvalidArgument("label prompt needs keywords");
    if (docs.empty()) throw InvalidArgument("label prompt needs documents");
    std::string user = "Keywords:";
    for (std::size_t i = 0; i < keywords.terms.size(); ++i) user += (i ? ", " : " ") + keywords.terms[i].first;
    user += "\n\nPosts:\n";
    for (const auto& d : docs) user += std::string(kDocOpen) + "\n" + d + "\n" + std::string(kDocClose) + "\n";
    return {system_prompt, std::move(user), 0.0, 0};
}

class LabelError : public Error {
public:
    using Error::Error;
};

/// Remainder of the last line that starts with "LABEL: " (after trimming), trimmed.
inline std::string extract_label(std::string_view response) {
    std::optional<std::string> found;
    std::size_t start = 0;
    while (start <= response.size()) {
        auto end = response.find('\n', start);
        if (end == std::string_view::npos) end = response.size();
        const auto line = trim(response.substr(start, end - start));
        if (line.substr(0, kLabelPrefix.size()) == kLabelPrefix) {
            auto rest = trim(line.substr(kLabelPrefix.size()));
            if (!rest.empty()) found = std::string(rest);
        }
        start = end + 1;
    }
    if (!found) throw LabelError("response has no LABEL line");
    return *found;
}

struct NarrativeLabel {
    int cluster_id = 0;
    std::string label;
    std::string raw_response;
    bool ok = false;
    std::string error; ///< Why labeling failed, if it did.
};

struct LabelOptions {
    KeywordOptions keywords;
    std::size_t representative_count = 8;
    std::string system_prompt = default_label_system_prompt();
};

struct LabelingResult {
    std::vector<ClusterKeywords> keywords;
    std::vector<NarrativeLabel> labels; ///< Cluster id order.
};

inline std::string placeholder_label(int cluster) { return "Unlabeled cluster " + std::to_string(cluster); }

/**
 * Keywords and a label for every non-noise cluster. Prompts go to the label
 * model concurrently; a failed cluster keeps a placeholder and its error.
 */
inline LabelingResult label_clusters(llm::Gateway& gateway, const density::ClusterAssignment& assignment,
                                     const Matrix& layout, std::span<const corpus::Post> posts,
                                     const LabelOptions& opts = {}) {
    if (assignment.labels.size() != posts.size() || layout.rows() != posts.size()) {
        throw InvalidArgument("assignment, layout and posts must be aligned");
    }
    LabelingResult result;
    if (assignment.n_clusters == 0) return result;
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < posts.size(); ++i) {
        if (assignment.labels[i] >= 0) members[assignment.labels[i]].push_back(i);
    }
    std::map<int, std::vector<Document>> docs;
    for (const auto& [c, idx] : members) {
        for (auto i : idx) docs[c].push_back({posts[i].text, posts[i].lang});
    }
    result.keywords = ctfidf_keywords(docs, opts.keywords);
    std::vector<std::string> ids;
    ids.reserve(posts.size());
    for (const auto& p : posts) ids.push_back(p.id);

    std::vector<int> clusters;
    for (const auto& [c, _] : members) clusters.push_back(c);
    result.labels.resize(clusters.size());
    parallel_for(clusters.size(), gateway.config().max_in_flight, [&](std::size_t k) {
        const int c = clusters[k];
        auto& out = result.labels[k];
        out.cluster_id = c;
        try {
            std::vector<std::string> texts;
            for (auto i : representative_docs(layout, members.at(c), ids, opts.representative_count)) {
                texts.push_back(posts[i].text);
            }
            auto kw = result.keywords[k];
            if (kw.terms.empty()) kw.terms.emplace_back("(none)", 0.0);
            const auto req = build_label_prompt(kw, texts, opts.system_prompt);
            out.raw_response = gateway.chat_complete(req, gateway.config().label_model_id);
            out.label = extract_label(out.raw_response);
            out.ok = true;
        } catch (const Error& e) {
            out.label = placeholder_label(c);
            out.error = e.what();
        }
    });
    return result;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline nlohmann::json keywords_to_json(std::span<const ClusterKeywords> keywords) {
    auto j = nlohmann::json::array();
    for (const auto& k : keywords) {
        auto terms = nlohmann::json::array();
        for (const auto& [t, w] : k.terms) terms.push_back({t, w});
        j.push_back({{"cluster_id", k.cluster_id}, {"terms", std::move(terms)}});
    }
    return j;
}

inline std::vector<ClusterKeywords> keywords_from_json(const nlohmann::json& j) {
    std::vector<ClusterKeywords> out;
    for (const auto& e : j) {
        ClusterKeywords k{e.at("cluster_id").get<int>(), {}};
        for (const auto& t : e.at("terms")) k.terms.emplace_back(t.at(0).get<std::string>(), t.at(1).get<double>());
        out.push_back(std::move(k));
    }
    return out;
}

inline nlohmann::json labels_to_json(std::span<const NarrativeLabel> labels) {
    auto j = nlohmann::json::array();
    for (const auto& l : labels) {
        nlohmann::json e{{"cluster_id", l.cluster_id}, {"label", l.label}};
        if (!l.ok) e["error"] = l.error;
        j.push_back(std::move(e));
    }
    return j;
}

inline std::vector<NarrativeLabel> labels_from_json(const nlohmann::json& j) {
    std::vector<NarrativeLabel> out;
    for (const auto& e : j) {
        NarrativeLabel l;
        l.cluster_id = e.at("cluster_id").get<int>();
        l.label = e.at("label").get<std::string>();
        l.ok = !e.contains("error");
        if (!l.ok) l.error = e["error"].get<std::string>();
        out.push_back(std::move(l));
    }
    return out;
}

} // namespace narrative::labeling
