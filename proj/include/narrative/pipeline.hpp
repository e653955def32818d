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

#include "audit.hpp"
#include "common.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "density.hpp"
#include "embed_stage.hpp"
#include "filter_stage.hpp"
#include "llm_gateway.hpp"
#include "manifold.hpp"
#include "narrative.hpp"
#include "scatter.hpp"
#include "tuner.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

/**
 * @file pipeline.hpp
 *
 * @brief Stage orchestration over a run directory.
 *
 * Each stage records a fingerprint of its inputs (config slice plus upstream
 * file digests) and the digests of its outputs in manifest.json. A stage whose
 * fingerprint and output digests still match is skipped.
 */

namespace narrative::pipeline {

struct RunPaths {
    std::filesystem::path dir;

    [[nodiscard]] std::filesystem::path manifest() const { return dir / "manifest.json"; }
    [[nodiscard]] std::filesystem::path posts() const { return dir / "posts.jsonl"; }
    [[nodiscard]] std::filesystem::path truth() const { return dir / "truth.json"; }
    [[nodiscard]] std::filesystem::path verdicts() const { return dir / "verdicts.jsonl"; }
    [[nodiscard]] std::filesystem::path embeddings() const { return dir / "embeddings.bin"; }
    [[nodiscard]] std::filesystem::path embeddings_manifest() const { return dir / "embeddings.manifest.json"; }
    [[nodiscard]] std::filesystem::path embedding_cache() const { return dir / "cache" / "embeddings.cache"; }
    [[nodiscard]] std::filesystem::path layout5d() const { return dir / "layout5d.csv"; }
    [[nodiscard]] std::filesystem::path layout2d() const { return dir / "layout2d.csv"; }
    [[nodiscard]] std::filesystem::path clusters() const { return dir / "clusters.json"; }
    [[nodiscard]] std::filesystem::path keywords() const { return dir / "keywords.json"; }
    [[nodiscard]] std::filesystem::path labels() const { return dir / "labels.json"; }
    [[nodiscard]] std::filesystem::path sweep() const { return dir / "sweep.json"; }
    [[nodiscard]] std::filesystem::path audit_dir() const { return dir / "audit"; }
    [[nodiscard]] std::filesystem::path scatter() const { return dir / "scatter.svg"; }
};

// ---------------------------------------------------------------------------
// Layout files
// ---------------------------------------------------------------------------

struct Layout {
    std::vector<std::string> ids;
    Matrix points;
};

/// Header `post_id,x0,...`; values in shortest round-trip form.
inline void save_layout_csv(const std::filesystem::path& path, std::span<const std::string> ids, const Matrix& m) {
    if (ids.size() != m.rows()) throw InvalidArgument("layout ids and rows must be aligned");
    std::string out = "post_id";
    for (std::size_t d = 0; d < m.cols(); ++d) out += ",x" + std::to_string(d);
    out += "\n";
    for (std::size_t i = 0; i < m.rows(); ++i) {
        out += corpus::detail::csv_escape(ids[i]);
        for (std::size_t d = 0; d < m.cols(); ++d) out += "," + format_double(m(i, d));
        out += "\n";
    }
    write_file_atomic(path, out);
}

inline Layout load_layout_csv(const std::filesystem::path& path) {
    const auto rows = corpus::detail::parse_csv(read_file(path));
    if (rows.empty() || rows[0].cells.empty() || rows[0].cells[0] != "post_id") {
        throw FormatError(path.string() + ": missing layout header");
    }
    const std::size_t dim = rows[0].cells.size() - 1;
    Layout l;
    std::vector<double> values;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& f = rows[r].cells;
        if (!rows[r].ok) throw FormatError(path.string() + ": malformed layout row");
        if (f.size() == 1 && f[0].empty()) continue;
        if (f.size() != dim + 1) throw FormatError(path.string() + ": ragged layout row");
        l.ids.push_back(f[0]);
        for (std::size_t d = 1; d <= dim; ++d) values.push_back(parse_double(f[d]));
    }
    l.points = Matrix(l.ids.size(), dim, std::move(values));
    return l;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

class Manifest {
public:
    explicit Manifest(RunPaths paths) : paths_(std::move(paths)) {
        if (std::filesystem::exists(paths_.manifest())) {
            doc_ = nlohmann::json::parse(read_file(paths_.manifest()), nullptr, false);
            if (doc_.is_discarded() || !doc_.is_object()) doc_ = nlohmann::json::object();
        }
        if (!doc_.contains("stages")) doc_["stages"] = nlohmann::json::object();
    }

    void set_config(const std::string& run_id, const nlohmann::json& snapshot) {
        doc_["run_id"] = run_id;
        doc_["config"] = snapshot;
        save();
    }

    /// True when the stage completed with this fingerprint and its outputs are unchanged.
    [[nodiscard]] bool up_to_date(const std::string& stage, const std::string& fingerprint) const {
        const auto& stages = doc_["stages"];
        if (!stages.contains(stage)) return false;
        const auto& s = stages[stage];
        if (!s.value("completed", false) || s.value("fingerprint", std::string{}) != fingerprint) return false;
        for (const auto& [file, digest] : s["outputs"].items()) {
            const auto p = paths_.dir / file;
            if (!std::filesystem::exists(p) || file_sha256(p) != digest.get<std::string>()) return false;
        }
        return true;
    }

    /// Whether an interrupted attempt with the same fingerprint left partial output worth keeping.
    [[nodiscard]] bool started_with(const std::string& stage, const std::string& fingerprint) const {
        const auto& stages = doc_["stages"];
        return stages.contains(stage) && stages[stage].value("fingerprint", std::string{}) == fingerprint;
    }

    void begin(const std::string& stage, const std::string& fingerprint) {
        doc_["stages"][stage] = {{"fingerprint", fingerprint}, {"completed", false}, {"outputs", nlohmann::json::object()}};
        save();
    }

    void complete(const std::string& stage, const std::vector<std::string>& outputs) {
        auto& s = doc_["stages"][stage];
        for (const auto& f : outputs) s["outputs"][f] = file_sha256(paths_.dir / f);
        s["completed"] = true;
        save();
    }

    [[nodiscard]] const nlohmann::json& document() const noexcept { return doc_; }

private:
    void save() const { write_file_atomic(paths_.manifest(), doc_.dump(2) + "\n"); }

    RunPaths paths_;
    nlohmann::json doc_ = nlohmann::json::object();
};

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct StageOutcome {
    std::string stage;
    bool skipped = false;
};

class Runner {
public:
    Runner(config::RunConfig cfg, std::filesystem::path run_dir, std::shared_ptr<llm::Transport> transport = nullptr,
           std::ostream* log = &std::cerr)
        : cfg_(std::move(cfg)), paths_{std::move(run_dir)}, log_(log) {
        std::filesystem::create_directories(paths_.dir);
        if (!transport) transport = config::make_transport(cfg_);
        gateway_ = std::make_unique<llm::Gateway>(cfg_.provider.endpoint, std::move(transport));
    }

    [[nodiscard]] const RunPaths& paths() const noexcept { return paths_; }
    [[nodiscard]] llm::Gateway& gateway() noexcept { return *gateway_; }

    /// ingest, filter, embed, reduce, sweep, select, plot.
    std::vector<StageOutcome> run_all() {
        Manifest(paths_).set_config(cfg_.run_id, config::to_json(cfg_));
        std::vector<StageOutcome> out;
        out.push_back(ingest());
        out.push_back(filter());
        out.push_back(embed());
        out.push_back(reduce());
        out.push_back(sweep());
        out.push_back(select());
        out.push_back(plot());
        return out;
    }

    StageOutcome ingest() {
        auto snapshot = config::to_json(cfg_)["corpus"];
        if (cfg_.corpus.source == "file") snapshot["digest"] = file_sha256(cfg_.corpus.path);
        return gated("ingest", snapshot.dump(), [&] {
            std::vector<corpus::Post> posts;
            std::vector<std::string> outputs{"posts.jsonl"};
            if (cfg_.corpus.source == "synthetic") {
                auto synth = corpus::generate_synthetic(cfg_.corpus.synthetic);
                posts = std::move(synth.posts);
                write_file_atomic(paths_.truth(), nlohmann::json(synth.truth).dump() + "\n");
                outputs.push_back("truth.json");
            } else {
                auto report = corpus::load_posts(cfg_.corpus.path, cfg_.corpus.format);
                say("ingest: " + std::to_string(report.records) + " records, " + std::to_string(report.skipped) +
                    " skipped");
                posts = std::move(report.posts);
            }
            const auto unique = corpus::dedupe(posts);
            corpus::save_posts(paths_.posts(), unique);
            say("ingest: " + std::to_string(unique.size()) + " posts");
            return outputs;
        });
    }

    StageOutcome filter() {
        const auto opts = filter_options();
        const auto probe = filter::build_filter_prompt(corpus::Post{"", corpus::Platform::synthetic, ".", "", {}, {}},
                                                       opts.catalog, opts.fragments);
        const std::string fp = fingerprint({file_sha256(paths_.posts()), cfg_.provider.endpoint.chat_model_id,
                                            sha256_hex(probe.system), std::to_string(opts.reformat_retries)});
        return gated("filter", fp, [&] {
            const auto posts = load_posts();
            filter::VerdictStore store(paths_.verdicts());
            const auto result = filter::run_filter(*gateway_, posts, store, opts);
            store.rewrite(posts);
            say("filter: " + std::to_string(result.stats.positives) + " positive, " +
                std::to_string(result.stats.negatives) + " negative, " + std::to_string(result.stats.invalid) +
                " invalid, " + std::to_string(result.stats.resumed) + " resumed");
            return std::vector<std::string>{"verdicts.jsonl"};
        }, /*keep_partial=*/true, {paths_.verdicts()});
    }

    StageOutcome embed() {
        const auto& ep = cfg_.provider.endpoint;
        const std::string fp = fingerprint({file_sha256(paths_.posts()), file_sha256(paths_.verdicts()),
                                            ep.embed_model_id, cfg_.instruction, ep.instruction_template});
        return gated("embed", fp, [&] {
            const auto posts = retained_posts();
            if (posts.empty()) throw Error("no posts retained by the filter; nothing to embed");
            embed::EmbeddingCache cache(paths_.embedding_cache());
            embed::EmbedStats stats;
            const auto vectors = embed::embed_posts(*gateway_, posts, cfg_.instruction, cache, &stats);
            embed::save_run_embeddings(paths_.embeddings(), vectors, ep.embed_model_id, cfg_.instruction);
            say("embed: " + std::to_string(vectors.size()) + " vectors, " + std::to_string(stats.cache_hits) +
                " from cache");
            return std::vector<std::string>{"embeddings.bin", "embeddings.manifest.json"};
        });
    }

    StageOutcome reduce() {
        const std::string fp = fingerprint({file_sha256(paths_.embeddings()), config::layout_to_json(cfg_.layout5d).dump(),
                                            config::layout_to_json(cfg_.layout2d).dump()});
        return gated("reduce", fp, [&] {
            const auto vectors = embed::load_run_embeddings(paths_.embeddings());
            std::vector<std::string> ids;
            for (const auto& v : vectors) ids.push_back(v.post_id);
            const auto x = embed::to_matrix(vectors);
            save_layout_csv(paths_.layout5d(), ids, manifold::reduce(x, cfg_.layout5d));
            say("reduce: " + std::to_string(cfg_.layout5d.n_components) + "-D layout done");
            save_layout_csv(paths_.layout2d(), ids, manifold::reduce(x, cfg_.layout2d));
            say("reduce: " + std::to_string(cfg_.layout2d.n_components) + "-D layout done");
            return std::vector<std::string>{"layout5d.csv", "layout2d.csv"};
        });
    }

    StageOutcome sweep() {
        const auto fp = sweep_fingerprint();
        return gated("sweep", fp, [&] {
            const auto [layout, posts] = aligned_layout(paths_.layout5d());
            auto opts = sweep_options();
            opts.workdir = paths_.dir;
            opts.fingerprint = fp;
            const auto report = tuner::run_sweep(*gateway_, layout.points, posts, opts);
            say("sweep:\n" + tuner::format_table(report));
            if (!report.chosen) throw Error("every sweep candidate failed");
            return std::vector<std::string>{"sweep.json"};
        }, /*keep_partial=*/true);
    }

    StageOutcome select() {
        return gated("select", fingerprint({file_sha256(paths_.sweep())}), [&] {
            const auto rep = tuner::report_from_json(nlohmann::json::parse(read_file(paths_.sweep())));
            if (!rep.chosen) throw Error("sweep.json has no chosen size");
            const auto dir = tuner::candidate_dir(paths_.dir, *rep.chosen);
            for (const char* f : {"clusters.json", "keywords.json", "labels.json"}) {
                write_file_atomic(paths_.dir / f, read_file(dir / f));
            }
            say("select: min_cluster_size = " + std::to_string(*rep.chosen));
            return std::vector<std::string>{"clusters.json", "keywords.json", "labels.json"};
        });
    }

    StageOutcome plot() {
        const std::string fp = fingerprint(
            {file_sha256(paths_.layout2d()), file_sha256(paths_.clusters()), file_sha256(paths_.labels())});
        return gated("plot", fp, [&] {
            write_scatter(paths_.scatter());
            return std::vector<std::string>{"scatter.svg"};
        });
    }

    /// One clustering at a fixed size into clusters.json; not gated.
    density::ClusterAssignment cluster(std::size_t min_cluster_size) {
        const auto layout = load_layout_csv(paths_.layout5d());
        const density::DensityConfig dc{cfg_.min_samples, min_cluster_size, cfg_.allow_single_cluster};
        auto a = density::cluster(layout.points, dc);
        write_file_atomic(paths_.clusters(), density::to_json(a, dc).dump());
        say("cluster: " + std::to_string(a.n_clusters) + " clusters, " +
            std::to_string(100.0 * tuner::noise_ratio(a)) + "% noise");
        return a;
    }

    /// Keywords and labels for the current clusters.json; not gated.
    labeling::LabelingResult label() {
        const auto [layout, posts] = aligned_layout(paths_.layout5d());
        const auto a = density::assignment_from_json(nlohmann::json::parse(read_file(paths_.clusters())));
        if (a.labels.size() != posts.size()) throw FormatError("clusters.json does not match the layout");
        auto result = labeling::label_clusters(*gateway_, a, layout.points, posts, sweep_options().labels);
        write_file_atomic(paths_.keywords(), labeling::keywords_to_json(result.keywords).dump(2));
        write_file_atomic(paths_.labels(), labeling::labels_to_json(result.labels).dump(2));
        return result;
    }

    void write_scatter(const std::filesystem::path& out) const {
        const auto layout = load_layout_csv(paths_.layout2d());
        const auto a = density::assignment_from_json(nlohmann::json::parse(read_file(paths_.clusters())));
        if (a.labels.size() != layout.ids.size()) throw FormatError("clusters.json does not match layout2d.csv");
        std::map<int, std::string> names;
        if (std::filesystem::exists(paths_.labels())) {
            for (const auto& l : labeling::labels_from_json(nlohmann::json::parse(read_file(paths_.labels())))) {
                names[l.cluster_id] = l.label;
            }
        }
        write_file_atomic(out, scatter::render_svg(layout.points, a, names));
    }

    /// Posts with their model verdicts, for audit sampling.
    [[nodiscard]] std::vector<audit::SampleSource> audit_sources() const {
        filter::VerdictStore store(paths_.verdicts());
        std::vector<audit::SampleSource> out;
        for (const auto& p : load_posts()) {
            const auto* v = store.find(p.id);
            if (v && v->valid) out.push_back({p.id, p.text, v->contains_narrative, v->reasoning});
        }
        return out;
    }

    [[nodiscard]] std::vector<corpus::Post> load_posts() const {
        return corpus::load_posts(paths_.posts(), corpus::Format::jsonl).posts;
    }

    /// Posts the filter kept, in corpus order.
    [[nodiscard]] std::vector<corpus::Post> retained_posts() const {
        filter::VerdictStore store(paths_.verdicts());
        std::vector<corpus::Post> out;
        for (auto& p : load_posts()) {
            const auto* v = store.find(p.id);
            if (v && v->positive()) out.push_back(std::move(p));
        }
        return out;
    }

    [[nodiscard]] tuner::SweepOptions sweep_options() const {
        tuner::SweepOptions o;
        o.candidates = cfg_.candidates;
        o.min_samples = cfg_.min_samples;
        o.allow_single_cluster = cfg_.allow_single_cluster;
        o.instruction = cfg_.instruction;
        auto& kw = o.labels.keywords;
        kw.top_n = cfg_.labeling.top_n;
        kw.min_count = cfg_.labeling.min_count;
        kw.use_stopwords = cfg_.labeling.use_stopwords;
        if (!cfg_.labeling.stopwords_dir.empty()) kw.stopwords = labeling::load_stopwords(cfg_.labeling.stopwords_dir);
        o.labels.representative_count = cfg_.labeling.representative_docs;
        return o;
    }

private:
    static std::string fingerprint(const std::vector<std::string>& parts) {
        std::string joined;
        for (const auto& p : parts) joined += sha256_hex(p) + "\n";
        return sha256_hex(joined);
    }

    std::string sweep_fingerprint() const {
        const auto c = config::to_json(cfg_);
        const auto& ep = cfg_.provider.endpoint;
        return fingerprint({file_sha256(paths_.layout5d()), file_sha256(paths_.posts()), file_sha256(paths_.verdicts()),
                            c["density"].dump(), c["sweep"].dump(), c["labeling"].dump(), ep.label_model_id,
                            ep.embed_model_id, cfg_.instruction});
    }

    filter::FilterOptions filter_options() const {
        filter::FilterOptions o;
        if (!cfg_.prompts_dir.empty()) o.fragments = filter::PromptFragments::load(cfg_.prompts_dir);
        o.reformat_retries = cfg_.reformat_retries;
        return o;
    }

    std::pair<Layout, std::vector<corpus::Post>> aligned_layout(const std::filesystem::path& path) const {
        auto layout = load_layout_csv(path);
        auto posts = retained_posts();
        if (posts.size() != layout.ids.size()) throw FormatError("layout does not match the retained posts");
        for (std::size_t i = 0; i < posts.size(); ++i) {
            if (posts[i].id != layout.ids[i]) throw FormatError("layout order does not match the retained posts");
        }
        return {std::move(layout), std::move(posts)};
    }

    template <typename Fn>
    StageOutcome gated(const std::string& stage, const std::string& fp, Fn&& body, bool keep_partial = false,
                       const std::vector<std::filesystem::path>& partial_files = {}) {
        Manifest manifest(paths_);
        if (manifest.up_to_date(stage, fp)) {
            say(stage + ": up to date, skipped");
            return {stage, true};
        }
        if (!keep_partial || !manifest.started_with(stage, fp)) {
            for (const auto& f : partial_files) std::filesystem::remove(f);
        }
        manifest.begin(stage, fp);
        const auto outputs = body();
        Manifest after(paths_);
        after.complete(stage, outputs);
        return {stage, false};
    }

    void say(const std::string& msg) const {
        if (log_) *log_ << msg << '\n';
    }

    config::RunConfig cfg_;
    RunPaths paths_;
    std::ostream* log_;
    std::unique_ptr<llm::Gateway> gateway_;
};

} // namespace narrative::pipeline
