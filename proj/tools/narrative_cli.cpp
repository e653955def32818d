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

// Command-line driver. Exit codes: 0 success, 1 stage failure, 2 usage or
// configuration error.

#include "narrative/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

using namespace narrative;

constexpr int kStageFailure = 1;
constexpr int kUsageError = 2;

struct Globals {
    std::string config_path;
    std::string run_dir;
};

config::RunConfig load(const Globals& g) {
    if (g.config_path.empty()) throw config::ConfigError("--config is required");
    return config::load_config(g.config_path);
}

std::filesystem::path run_dir_for(const Globals& g, const config::RunConfig& cfg) {
    return g.run_dir.empty() ? std::filesystem::path("runs") / cfg.run_id : std::filesystem::path(g.run_dir);
}

void report(const pipeline::StageOutcome& o) {
    std::cout << o.stage << (o.skipped ? ": skipped (up to date)" : ": done") << '\n';
}

int serve(pipeline::Runner& runner, const config::RunConfig& cfg, int port_override) {
    audit::SessionStore store(runner.paths().audit_dir(), runner.audit_sources());
    audit::AuditApi api(store);
    audit::ServeOptions opts;
    if (!cfg.audit.token_env.empty()) {
        const char* token = std::getenv(cfg.audit.token_env.c_str());
        if (!token || !*token) {
            std::cerr << "error: environment variable " << cfg.audit.token_env << " is not set\n";
            return kUsageError;
        }
        opts.bearer_token = token;
    }
    if (!cfg.audit.static_dir.empty()) opts.static_dir = cfg.audit.static_dir;
    httplib::Server server;
    audit::install_routes(server, api, opts);
    const int port = port_override > 0 ? port_override : cfg.audit.port;
    std::cout << "audit service on http://" << cfg.audit.bind << ':' << port << '\n' << std::flush;
    if (!server.listen(cfg.audit.bind, port)) {
        std::cerr << "error: cannot listen on " << cfg.audit.bind << ':' << port << '\n';
        return kStageFailure;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Narrative discovery pipeline"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("-c,--config", g.config_path, "TOML run configuration");
    app.add_option("-r,--run-dir", g.run_dir, "Run directory (default runs/<run_id>)");

    auto* ingest = app.add_subcommand("ingest", "Load, normalize and deduplicate the corpus");
    auto* filter = app.add_subcommand("filter", "Classify posts with the chat model");
    auto* embed = app.add_subcommand("embed", "Embed retained posts");
    auto* reduce = app.add_subcommand("reduce", "Compute the 5-D and 2-D layouts");
    auto* sweep = app.add_subcommand("sweep", "Sweep min_cluster_size and select the sweet spot");
    auto* cluster = app.add_subcommand("cluster", "Cluster once at a fixed min_cluster_size");
    std::size_t mcs = 0;
    cluster->add_option("--min-cluster-size", mcs)->required()->check(CLI::Range(std::size_t{2}, std::size_t{1} << 40));
    auto* label = app.add_subcommand("label", "Extract keywords and label the current clusters");
    auto* plot = app.add_subcommand("plot", "Render the 2-D scatter plot");
    std::string plot_out;
    plot->add_option("-o,--out", plot_out, "Output SVG (default <run-dir>/scatter.svg)");
    auto* run_all = app.add_subcommand("run-all", "Run every stage, skipping those up to date");

    auto* synth = app.add_subcommand("synth", "Write a synthetic corpus file");
    corpus::SynthSpec spec;
    std::string synth_out, synth_format = "jsonl";
    synth->add_option("-o,--out", synth_out)->required();
    synth->add_option("--format", synth_format)->check(CLI::IsMember({"jsonl", "csv"}));
    synth->add_option("--narratives", spec.n_narratives);
    synth->add_option("--posts-per-narrative", spec.posts_per_narrative);
    synth->add_option("--distractor-fraction", spec.distractor_fraction);
    synth->add_option("--seed", spec.seed);

    auto* eval = app.add_subcommand("eval", "Human audit");
    eval->require_subcommand(1);
    auto* eval_serve = eval->add_subcommand("serve", "Serve the audit API");
    int port = 0;
    eval_serve->add_option("--port", port, "Override the configured port");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kUsageError;
    }

    try {
        if (synth->parsed()) {
            const auto c = corpus::generate_synthetic(spec);
            corpus::save_posts(synth_out, c.posts, corpus::parse_format(synth_format));
            std::cout << "wrote " << c.posts.size() << " posts to " << synth_out << '\n';
            return 0;
        }

        config::RunConfig cfg;
        try {
            cfg = load(g);
        } catch (const config::ConfigError& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kUsageError;
        }
        pipeline::Runner runner(cfg, run_dir_for(g, cfg));

        if (ingest->parsed()) report(runner.ingest());
        if (filter->parsed()) report(runner.filter());
        if (embed->parsed()) report(runner.embed());
        if (reduce->parsed()) report(runner.reduce());
        if (sweep->parsed()) {
            report(runner.sweep());
            report(runner.select());
        }
        if (cluster->parsed()) {
            const auto a = runner.cluster(mcs);
            std::cout << a.n_clusters << " clusters\n";
        }
        if (label->parsed()) {
            for (const auto& l : runner.label().labels) std::cout << l.cluster_id << ": " << l.label << '\n';
        }
        if (plot->parsed()) {
            const auto out = plot_out.empty() ? runner.paths().scatter() : std::filesystem::path(plot_out);
            runner.write_scatter(out);
            std::cout << "wrote " << out.string() << '\n';
        }
        if (run_all->parsed()) {
            for (const auto& o : runner.run_all()) report(o);
        }
        if (eval_serve->parsed()) return serve(runner, cfg, port);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kStageFailure;
    }
    return 0;
}
