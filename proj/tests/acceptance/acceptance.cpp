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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Each check also has a wall-clock budget; exceeding it is a failure.

#include "narrative/pipeline.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

using namespace narrative;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

oracle::Points rows(const Matrix& m) {
    oracle::Points out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) out[i].assign(m.row(i).begin(), m.row(i).end());
    return out;
}

Matrix to_matrix(const oracle::Points& pts) {
    Matrix m(pts.size(), pts.empty() ? 0 : pts[0].size());
    for (std::size_t i = 0; i < pts.size(); ++i) std::copy(pts[i].begin(), pts[i].end(), m.row(i).begin());
    return m;
}

Matrix mock_blobs(std::size_t per_blob, std::size_t blobs, std::vector<int>& truth) {
    llm::MockProvider mock;
    Matrix m(per_blob * blobs, mock.config().dimension);
    for (std::size_t b = 0; b < blobs; ++b) {
        for (std::size_t i = 0; i < per_blob; ++i) {
            const auto v = mock.embed_one(corpus::narrative_marker(b) + " item " + std::to_string(i));
            std::copy(v.begin(), v.end(), m.row(b * per_blob + i).begin());
            truth.push_back(static_cast<int>(b));
        }
    }
    return m;
}

// --- metric round trip -----------------------------------------------------

Outcome metric_round_trip() {
    const auto m = audit::metrics_from_confusion({66, 34, 6, 94});
    const bool ok = std::abs(m.precision - 0.660) <= 0.001 && std::abs(m.recall - 0.917) <= 0.001 &&
                    std::abs(m.f1 - 0.77) <= 0.005;
    return {ok, "P=" + fmt(m.precision) + " R=" + fmt(m.recall) + " F1=" + fmt(m.f1)};
}

// --- sweet spot ------------------------------------------------------------

Outcome sweet_spot() {
    const std::vector<std::size_t> sizes{100, 200, 400, 600, 800, 1000};
    const std::vector<double> noise{43.80, 40.04, 29.73, 30.16, 31.17, 32.19};
    const std::vector<double> dist{0.3233, 0.3150, 0.3057, 0.3054, 0.2953, 0.2863};
    std::vector<tuner::SweepRow> table;
    for (std::size_t i = 0; i < sizes.size(); ++i) table.push_back({sizes[i], 0, noise[i], dist[i]});
    const auto chosen = tuner::select_sweet_spot(table);
    return {chosen == 400u, "chosen=" + std::to_string(chosen)};
}

// --- HDBSCAN oracle --------------------------------------------------------

Outcome hdbscan_oracle() {
    std::mt19937_64 gen(12345);
    std::size_t matched = 0;
    const std::size_t instances = 200;
    for (std::size_t inst = 0; inst < instances; ++inst) {
        const std::size_t dim = inst % 2 ? 5 : 2;
        const std::size_t blobs = 1 + gen() % 4;
        const std::size_t per = 3 + gen() % (200 / blobs - 2);
        auto [pts, truth] = oracle::gaussian_blobs(per, blobs, dim, 1.0, 6.0, gen());
        const std::size_t mcs = 3 + gen() % 18;
        const std::size_t ms = std::min<std::size_t>(2 + gen() % 9, pts.size());
        const bool single = gen() % 4 == 0;
        const auto a = density::cluster(to_matrix(pts), density::DensityConfig{ms, mcs, single});
        oracle::HdbscanReference ref(pts, ms, mcs, single);
        matched += oracle::same_partition(a.labels, ref.labels());
    }
    return {matched == instances, std::to_string(matched) + "/" + std::to_string(instances) + " instances match"};
}

// --- blob recovery ---------------------------------------------------------

// ARI over all points, noise kept as its own label.
double ari_with_noise(const std::vector<int>& got, const std::vector<int>& truth) {
    return oracle::adjusted_rand_index(got, truth);
}

Outcome blob_recovery() {
    const density::DensityConfig dc{25, 100, false};
    const auto [pts, truth] = oracle::gaussian_blobs(1000, 3, 5, 1.0, 10.0, 31);
    const auto direct = density::cluster(to_matrix(pts), dc);
    const double direct_ari = ari_with_noise(direct.labels, truth);
    const double direct_noise = tuner::noise_ratio(direct);

    std::vector<int> mock_truth;
    const auto x = mock_blobs(1000, 3, mock_truth);
    const auto layout = manifold::reduce(x, manifold::LayoutConfig{});
    const auto piped = density::cluster(layout, dc);
    const double piped_ari = ari_with_noise(piped.labels, mock_truth);

    const bool ok = direct_ari >= 0.95 && direct_noise <= 0.20 && piped_ari >= 0.90;
    return {ok, "direct ARI=" + fmt(direct_ari) + " noise=" + fmt(100 * direct_noise, 2) +
                    "%, pipeline ARI=" + fmt(piped_ari)};
}

// --- UMAP ------------------------------------------------------------------

Outcome umap_checks() {
    // Least-squares values from scipy.optimize.curve_fit on the same target curve.
    constexpr double kOracleA = 1.93280839734315;
    constexpr double kOracleB = 0.7904949732233831;
    std::vector<int> truth;
    const auto x = mock_blobs(1000, 3, truth);
    manifold::LayoutConfig cfg;
    cfg.seed = 42;
    const auto first = manifold::reduce(x, cfg);
    const auto second = manifold::reduce(x, cfg);
    const bool identical = first == second;
    const double tw = oracle::trustworthiness(rows(x), rows(first), 15);
    const auto ab = manifold::fit_ab(0.0, 1.0);
    const double ea = std::abs(ab.a - kOracleA) / kOracleA, eb = std::abs(ab.b - kOracleB) / kOracleB;
    const bool ok = identical && tw >= 0.90 && ea <= 0.05 && eb <= 0.05;
    return {ok, std::string("bit-identical=") + (identical ? "yes" : "no") + " T(15)=" + fmt(tw) +
                    " a=" + fmt(ab.a) + " b=" + fmt(ab.b) + " (rel err " + fmt(ea, 5) + ", " + fmt(eb, 5) + ")"};
}

// --- c-TF-IDF --------------------------------------------------------------

double brute_weight(const std::map<int, std::vector<std::string>>& docs, const std::string& term, int cluster) {
    double total = 0, f = 0, tf = 0;
    for (const auto& [c, texts] : docs) {
        for (const auto& t : texts) {
            std::istringstream in(t);
            std::string w;
            while (in >> w) {
                ++total;
                if (w == term) {
                    ++f;
                    if (c == cluster) ++tf;
                }
            }
        }
    }
    return tf == 0 ? 0.0 : tf * std::log(1.0 + (total / static_cast<double>(docs.size())) / f);
}

Outcome ctfidf() {
    labeling::KeywordOptions opts;
    opts.min_count = 0;
    opts.use_stopwords = false;
    // A = 5 tokens / 2 clusters = 2.5; f(war) = 2; tf(war, A) = 2.
    const labeling::CtfidfModel toy({{0, {{"war war peace", "en"}}}, {1, {{"peace treaty", "en"}}}}, opts);
    const double hand = 2.0 * std::log(1.0 + 2.5 / 2.0);
    double worst = std::abs(toy.weight("war", 0) - hand);

    std::mt19937_64 gen(99);
    const std::vector<std::string> vocab{"aa", "bb", "cc", "dd", "ee", "ff", "gg", "hh"};
    for (int rep = 0; rep < 100; ++rep) {
        const int clusters = 2 + static_cast<int>(gen() % 5);
        std::map<int, std::vector<std::string>> raw;
        std::map<int, std::vector<labeling::Document>> docs;
        for (int c = 0; c < clusters; ++c) {
            const int n_docs = 1 + static_cast<int>(gen() % 5);
            for (int d = 0; d < n_docs; ++d) {
                std::string s;
                const int len = 1 + static_cast<int>(gen() % 10);
                for (int w = 0; w < len; ++w) s += (w ? " " : "") + vocab[gen() % vocab.size()];
                raw[c].push_back(s);
                docs[c].push_back({s, ""});
            }
        }
        const labeling::CtfidfModel m(docs, opts);
        for (const auto& term : vocab) {
            for (int c = 0; c < clusters; ++c) worst = std::max(worst, std::abs(m.weight(term, c) - brute_weight(raw, term, c)));
        }
    }
    return {worst <= 1e-9 && std::abs(hand - 1.6218604324326575) <= 1e-12,
            "W(war,A)=" + fmt(toy.weight("war", 0), 10) + " max abs err=" + [&] {
                std::ostringstream os;
                os << std::scientific << std::setprecision(2) << worst;
                return os.str();
            }()};
}

// --- end to end --------------------------------------------------------------

Outcome end_to_end() {
    const auto cfg = config::load_config(std::filesystem::path(NARRATIVE_DATA_DIR).parent_path() / "configs" /
                                         "synthetic.toml");
    testing_support::TempDir dir("e2e");
    std::ostringstream log;
    pipeline::Runner runner(cfg, dir.path(), nullptr, &log);
    runner.run_all();

    const auto truth_json = nlohmann::json::parse(read_file(runner.paths().truth()));
    std::map<std::string, int> truth = truth_json.get<std::map<std::string, int>>();
    std::size_t planted = 0;
    for (const auto& [id, t] : truth) planted += t != corpus::kDistractor;

    const auto retained = runner.retained_posts();
    bool exact = retained.size() == planted;
    for (const auto& p : retained) exact = exact && truth.at(p.id) != corpus::kDistractor;

    const auto report = tuner::report_from_json(nlohmann::json::parse(read_file(runner.paths().sweep())));
    const auto a = density::assignment_from_json(nlohmann::json::parse(read_file(runner.paths().clusters())));
    std::vector<int> want;
    for (const auto& p : retained) want.push_back(truth.at(p.id));
    const double ari = a.labels.size() == want.size() ? oracle::adjusted_rand_index(a.labels, want) : 0.0;

    // A plant is covered when some cluster with a model-produced label has it as majority.
    std::map<int, bool> labeled;
    for (const auto& l : labeling::labels_from_json(nlohmann::json::parse(read_file(runner.paths().labels())))) {
        labeled[l.cluster_id] = l.ok;
    }
    std::set<int> covered;
    for (std::size_t c = 0; c < a.n_clusters; ++c) {
        std::map<int, std::size_t> votes;
        for (std::size_t i = 0; i < a.labels.size(); ++i) {
            if (a.labels[i] == static_cast<int>(c)) ++votes[want[i]];
        }
        if (votes.empty() || !labeled[static_cast<int>(c)]) continue;
        covered.insert(std::max_element(votes.begin(), votes.end(), [](auto& l, auto& r) { return l.second < r.second; })->first);
    }
    const std::size_t plants = cfg.corpus.synthetic.n_narratives;
    const bool ok = exact && report.rows.size() == 6 && report.chosen && ari >= 0.9 && covered.size() == plants;
    return {ok, "retained=" + std::to_string(retained.size()) + "/" + std::to_string(planted) +
                    (exact ? " exact" : " MISMATCH") + " rows=" + std::to_string(report.rows.size()) +
                    " chosen=" + (report.chosen ? std::to_string(*report.chosen) : std::string("none")) +
                    " clusters=" + std::to_string(a.n_clusters) + " ARI=" + fmt(ari) +
                    " covered=" + std::to_string(covered.size()) + "/" + std::to_string(plants)};
}

// --- audit -------------------------------------------------------------------

struct AuditRun {
    std::size_t eligible_pos = 0, eligible_neg = 0, borderline = 0;
    std::string session_file;
};

AuditRun simulate_audit(std::uint64_t seed) {
    const auto synth = corpus::generate_synthetic({5, 120, 0.5, 4});
    Rng model(seed ^ 0x5eed);
    std::vector<audit::SampleSource> sources;
    for (const auto& p : synth.posts) {
        const bool marked = synth.truth.at(p.id) != corpus::kDistractor;
        // An imperfect classifier: 15% of verdicts flipped.
        const bool verdict = model.uniform() < 0.15 ? !marked : marked;
        sources.push_back({p.id, p.text, verdict, "r"});
    }
    testing_support::TempDir dir("audit");
    audit::SessionStore store(dir.path(), sources);
    audit::AuditApi api(store);
    const auto id = api.create_session({{"seed", seed}, {"n_per_class", 100}}).body.at("session_id").get<std::string>();
    Rng rater(seed + 1);
    AuditRun run;
    for (int guard = 0; guard < 10000; ++guard) {
        const auto next = api.next(id);
        if (next.status != 200) throw Error("next failed: " + next.body.dump());
        if (next.body.value("complete", false)) break;
        // The rater sees only the text.
        const auto text = next.body.at("text").get<std::string>();
        std::string label = text.find("[[N") != std::string::npos ? "narrative" : "not_narrative";
        if (rater.uniform() < 0.10) {
            label = "borderline";
            ++run.borderline;
        }
        const auto r = api.rate(id, {{"item_id", next.body.at("item_id")}, {"label", label}});
        if (r.status != 200) throw Error("rate failed: " + r.body.dump());
    }
    for (const auto& it : store.get(id).items) {
        if (!it.eligible()) continue;
        (it.source.model_verdict ? run.eligible_pos : run.eligible_neg) += 1;
    }
    run.session_file = read_file(store.path_of(id));
    return run;
}

Outcome audit_protocol() {
    const auto a = simulate_audit(2024);
    const auto b = simulate_audit(2024);
    const bool ok = a.eligible_pos == 100 && a.eligible_neg == 100 && a.borderline > 0 &&
                    a.session_file == b.session_file;
    return {ok, "eligible=" + std::to_string(a.eligible_pos + a.eligible_neg) + " (" + std::to_string(a.eligible_pos) +
                    "+" + std::to_string(a.eligible_neg) + ") borderline=" + std::to_string(a.borderline) +
                    " rerun " + (a.session_file == b.session_file ? "identical" : "DIFFERS")};
}

struct Criterion {
    std::string name;
    std::function<Outcome()> run;
    double budget_s;
};

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"metric-round-trip", metric_round_trip, 1},
        {"sweet-spot-rule", sweet_spot, 1},
        {"hdbscan-oracle-equivalence", hdbscan_oracle, 120},
        {"blob-recovery", blob_recovery, 180},
        {"umap-checks", umap_checks, 180},
        {"ctfidf-oracle", ctfidf, 1},
        {"end-to-end-synthetic", end_to_end, 300},
        {"audit-protocol", audit_protocol, 5},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > c.budget_s) {
            o.pass = false;
            o.detail += " (over budget)";
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << fmt(secs, 1) << "s]\n"
                  << std::flush;
    }
    return failed == 0 ? 0 : 1;
}
