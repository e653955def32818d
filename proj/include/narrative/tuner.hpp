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
#include "density.hpp"
#include "embed_stage.hpp"
#include "llm_gateway.hpp"
#include "narrative.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

/**
 * @file tuner.hpp
 *
 * @brief min_cluster_size sweep: noise ratio, mean pairwise label distance, and the pick.
 */

namespace narrative::tuner {

inline const std::vector<std::size_t>& default_candidates() {
    static const std::vector<std::size_t> c{100, 200, 400, 600, 800, 1000};
    return c;
}

/// Noise tolerance, in percentage points above the minimum, for the pick.
inline constexpr double kNoiseWindowPct = 1.0;

struct SweepRow {
    std::size_t min_cluster_size = 0;
    std::size_t n_clusters = 0;
    double noise_pct = 0.0;
    std::optional<double> avg_semantic_distance; ///< Unset with fewer than two labels.
};

struct SweepFailure {
    std::size_t min_cluster_size = 0;
    std::string error;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    std::optional<std::size_t> chosen;
    std::vector<SweepFailure> failures;
};

/// Fraction of points labeled noise.
inline double noise_ratio(const density::ClusterAssignment& a) {
    if (a.labels.empty()) throw InvalidArgument("noise_ratio of an empty assignment");
    std::size_t noise = 0;
    for (int l : a.labels) noise += l == density::kNoise;
    return static_cast<double>(noise) / static_cast<double>(a.labels.size());
}

/// Mean of (1 - cosine similarity) over unordered pairs of unit vectors.
inline double mean_pairwise_cosine_distance(std::span<const std::vector<double>> unit) {
    if (unit.size() < 2) throw InvalidArgument("pairwise distance needs at least two vectors");
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < unit.size(); ++i) {
        for (std::size_t j = i + 1; j < unit.size(); ++j) {
            sum += embed::cosine_distance(unit[i], unit[j]);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

/// Embeds the label texts with the post instruction and averages their pairwise distance.
inline double avg_label_distance(llm::Gateway& gateway, const std::vector<std::string>& labels,
                                 std::string_view instruction = embed::kDefaultInstruction) {
    if (labels.size() < 2) throw InvalidArgument("average label distance needs at least two labels");
    const auto raw = gateway.embed_batch(labels, std::string(instruction));
    std::vector<std::vector<double>> unit;
    unit.reserve(raw.size());
    for (const auto& v : raw) unit.push_back(embed::l2_normalize(v));
    return mean_pairwise_cosine_distance(unit);
}

/**
 * Smallest min_cluster_size whose noise is within kNoiseWindowPct of the
 * minimum. When every row ties on noise, the largest label distance wins.
 */
inline std::size_t select_sweet_spot(std::span<const SweepRow> rows) {
    if (rows.empty()) throw InvalidArgument("cannot select from an empty sweep");
    double lo = rows[0].noise_pct, hi = rows[0].noise_pct;
    for (const auto& r : rows) {
        lo = std::min(lo, r.noise_pct);
        hi = std::max(hi, r.noise_pct);
    }
    if (rows.size() > 1 && lo == hi) {
        const SweepRow* best = &rows[0];
        for (const auto& r : rows) {
            const double d = r.avg_semantic_distance.value_or(-1.0);
            const double b = best->avg_semantic_distance.value_or(-1.0);
            if (d > b || (d == b && r.min_cluster_size < best->min_cluster_size)) best = &r;
        }
        return best->min_cluster_size;
    }
    std::optional<std::size_t> pick;
    for (const auto& r : rows) {
        if (r.noise_pct <= lo + kNoiseWindowPct && (!pick || r.min_cluster_size < *pick)) pick = r.min_cluster_size;
    }
    return *pick;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const SweepRow& r) {
    nlohmann::json j{{"min_cluster_size", r.min_cluster_size},
                     {"n_clusters", r.n_clusters},
                     {"noise_pct", r.noise_pct},
                     {"avg_semantic_distance", nullptr}};
    if (r.avg_semantic_distance) j["avg_semantic_distance"] = *r.avg_semantic_distance;
    return j;
}

inline SweepRow row_from_json(const nlohmann::json& j) {
    SweepRow r;
    r.min_cluster_size = j.at("min_cluster_size").get<std::size_t>();
    r.n_clusters = j.at("n_clusters").get<std::size_t>();
    r.noise_pct = j.at("noise_pct").get<double>();
    if (r.noise_pct < 0.0 || r.noise_pct > 100.0) throw FormatError("noise_pct outside [0, 100]");
    if (const auto& d = j.at("avg_semantic_distance"); !d.is_null()) r.avg_semantic_distance = d.get<double>();
    return r;
}

inline nlohmann::json to_json(const SweepReport& rep, const std::string& fingerprint = {}) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows) rows.push_back(to_json(r));
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : rep.failures) failures.push_back({{"min_cluster_size", f.min_cluster_size}, {"error", f.error}});
    nlohmann::json j{{"rows", rows}, {"chosen", nullptr}, {"failures", failures}, {"fingerprint", fingerprint}};
    if (rep.chosen) j["chosen"] = *rep.chosen;
    return j;
}

inline SweepReport report_from_json(const nlohmann::json& j) {
    SweepReport rep;
    for (const auto& r : j.at("rows")) rep.rows.push_back(row_from_json(r));
    if (j.contains("failures")) {
        for (const auto& f : j["failures"]) {
            rep.failures.push_back({f.at("min_cluster_size").get<std::size_t>(), f.at("error").get<std::string>()});
        }
    }
    if (const auto& c = j.at("chosen"); !c.is_null()) rep.chosen = c.get<std::size_t>();
    return rep;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepOptions {
    std::vector<std::size_t> candidates = default_candidates();
    std::size_t min_samples = 100;
    bool allow_single_cluster = false;
    labeling::LabelOptions labels;
    std::string instruction = std::string(embed::kDefaultInstruction);
    /// When set, sweep.json and per-candidate artifacts live here and completed candidates are reused.
    std::optional<std::filesystem::path> workdir;
    /// Identifies the inputs; persisted rows with another fingerprint are discarded.
    std::string fingerprint;
};

inline std::filesystem::path candidate_dir(const std::filesystem::path& workdir, std::size_t mcs) {
    return workdir / "sweep" / ("mcs_" + std::to_string(mcs));
}

struct CandidateResult {
    SweepRow row;
    density::ClusterAssignment assignment;
    labeling::LabelingResult labeling;
};

/// Cluster, label and score one candidate from a precomputed MST.
inline CandidateResult evaluate_candidate(llm::Gateway& gateway, std::span<const density::MstEdge> mst,
                                          const Matrix& points, std::span<const corpus::Post> posts,
                                          std::size_t mcs, const SweepOptions& opts) {
    density::DensityConfig dc{opts.min_samples, mcs, opts.allow_single_cluster};
    dc.validate();
    CandidateResult out;
    const auto tree = density::condense_tree(mst, points.rows(), mcs);
    out.assignment = density::extract_clusters_eom(tree, dc);
    out.labeling = labeling::label_clusters(gateway, out.assignment, points, posts, opts.labels);
    out.row.min_cluster_size = mcs;
    out.row.n_clusters = out.assignment.n_clusters;
    out.row.noise_pct = 100.0 * noise_ratio(out.assignment);
    std::vector<std::string> texts;
    for (const auto& l : out.labeling.labels) {
        if (l.ok) texts.push_back(l.label);
    }
    if (texts.size() >= 2) out.row.avg_semantic_distance = avg_label_distance(gateway, texts, opts.instruction);
    return out;
}

inline void save_candidate(const std::filesystem::path& dir, const CandidateResult& c, const SweepOptions& opts) {
    const density::DensityConfig dc{opts.min_samples, c.row.min_cluster_size, opts.allow_single_cluster};
    write_file_atomic(dir / "clusters.json", density::to_json(c.assignment, dc).dump());
    write_file_atomic(dir / "keywords.json", labeling::keywords_to_json(c.labeling.keywords).dump(2));
    write_file_atomic(dir / "labels.json", labeling::labels_to_json(c.labeling.labels).dump(2));
}

/**
 * Runs every candidate in order. With a workdir, sweep.json is rewritten after
 * each candidate and rows whose artifacts already exist are reused.
 */
inline SweepReport run_sweep(llm::Gateway& gateway, const Matrix& points, std::span<const corpus::Post> posts,
                             const SweepOptions& opts = {}) {
    if (points.rows() != posts.size()) throw InvalidArgument("points and posts must be aligned");
    if (opts.candidates.empty()) throw InvalidArgument("sweep needs at least one candidate");

    SweepReport report;
    std::vector<SweepRow> previous;
    const auto sweep_json = opts.workdir ? *opts.workdir / "sweep.json" : std::filesystem::path{};
    if (opts.workdir && std::filesystem::exists(sweep_json)) {
        try {
            const auto j = nlohmann::json::parse(read_file(sweep_json));
            if (j.value("fingerprint", std::string{}) == opts.fingerprint) previous = report_from_json(j).rows;
        } catch (const std::exception&) {
            previous.clear();
        }
    }
    auto persist = [&] {
        if (opts.workdir) write_file_atomic(sweep_json, to_json(report, opts.fingerprint).dump(2));
    };

    std::optional<std::vector<density::MstEdge>> mst;
    for (const auto mcs : opts.candidates) {
        const auto reused = std::find_if(previous.begin(), previous.end(),
                                         [&](const SweepRow& r) { return r.min_cluster_size == mcs; });
        if (reused != previous.end() && std::filesystem::exists(candidate_dir(*opts.workdir, mcs) / "labels.json")) {
            report.rows.push_back(*reused);
            continue;
        }
        try {
            if (!mst) {
                if (opts.min_samples > points.rows()) throw InvalidArgument("min_samples exceeds the number of points");
                mst = density::build_mst(points, density::core_distances(points, opts.min_samples));
            }
            auto result = evaluate_candidate(gateway, *mst, points, posts, mcs, opts);
            if (opts.workdir) save_candidate(candidate_dir(*opts.workdir, mcs), result, opts);
            report.rows.push_back(result.row);
        } catch (const Error& e) {
            report.failures.push_back({mcs, e.what()});
        }
        persist();
    }
    if (!report.rows.empty()) report.chosen = select_sweet_spot(report.rows);
    persist();
    return report;
}

/// Table-style text: Min. Size, Clusters, Noise (%), Avg. Semantic Distance.
inline std::string format_table(const SweepReport& rep) {
    auto fixed = [](double v, int digits) {
        char buf[64];
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
        return std::string(buf, p);
    };
    std::string out = "Min. Size | Clusters | Noise (%) | Avg. Semantic Distance\n";
    for (const auto& r : rep.rows) {
        out += std::to_string(r.min_cluster_size) + " | " + std::to_string(r.n_clusters) + " | " +
               fixed(r.noise_pct, 2) + " | " +
               (r.avg_semantic_distance ? fixed(*r.avg_semantic_distance, 4) : std::string("n/a"));
        if (rep.chosen && *rep.chosen == r.min_cluster_size) out += "  <- chosen";
        out += "\n";
    }
    for (const auto& f : rep.failures) out += std::to_string(f.min_cluster_size) + " | failed: " + f.error + "\n";
    return out;
}

} // namespace narrative::tuner
