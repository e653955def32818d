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

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <optional>
#include <thread>
#include <vector>

/**
 * @file manifold.hpp
 *
 * @brief UMAP-style dimensionality reduction.
 *
 * The composition is: k-nearest-neighbour graph, smooth-kNN calibration of
 * each point's local scale, probabilistic fuzzy union into a symmetric graph,
 * least-squares fit of the low-dimensional similarity curve, and stochastic
 * gradient descent on the layout starting from a spectral embedding.
 */

namespace narrative::manifold {

enum class Metric { cosine, euclidean };

/**
 * Neighbour lists, k per point, ascending by distance (ties by index), self excluded.
 */
struct KnnGraph {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<std::size_t> indices; ///< n * k
    std::vector<double> distances;    ///< n * k

    [[nodiscard]] std::span<const std::size_t> neighbors(std::size_t i) const { return {indices.data() + i * k, k}; }
    [[nodiscard]] std::span<const double> dists(std::size_t i) const { return {distances.data() + i * k, k}; }
};

namespace detail {

/// Row-normalized copy for the cosine metric; zero rows stay zero.
inline Matrix prepare(const Matrix& x, Metric metric) {
    if (metric == Metric::euclidean) return x;
    Matrix out = x;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        const double norm = std::sqrt(dot(r, r));
        if (norm > 0.0) {
            for (double& v : r) v /= norm;
        }
    }
    return out;
}

/// Distance on prepared rows.
inline double distance(std::span<const double> a, std::span<const double> b, Metric metric) {
    if (metric == Metric::euclidean) return euclidean(a, b);
    return std::max(0.0, 1.0 - dot(a, b));
}

struct Candidate {
    double dist;
    std::size_t idx;
    bool operator<(const Candidate& o) const { return dist < o.dist || (dist == o.dist && idx < o.idx); }
};

inline std::size_t worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

} // namespace detail

/// Exact brute-force neighbours. Rows are independent, so the parallel loop is deterministic.
inline KnnGraph knn_exact(const Matrix& x, std::size_t k, Metric metric) {
    const std::size_t n = x.rows();
    if (k < 1 || k >= n) throw InvalidArgument("knn requires 1 <= k < n");
    const Matrix p = detail::prepare(x, metric);
    KnnGraph g{n, k, std::vector<std::size_t>(n * k), std::vector<double>(n * k)};
    parallel_for(n, detail::worker_count(), [&](std::size_t i) {
        std::vector<detail::Candidate> c;
        c.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) c.push_back({detail::distance(p.row(i), p.row(j), metric), j});
        }
        std::partial_sort(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(k), c.end());
        for (std::size_t m = 0; m < k; ++m) {
            g.indices[i * k + m] = c[m].idx;
            g.distances[i * k + m] = c[m].dist;
        }
    });
    return g;
}

/**
 * Approximate neighbours by NN-descent (local joins over neighbour-of-neighbour
 * candidates, with reverse neighbours). Single-threaded and seeded.
 */
inline KnnGraph knn_nn_descent(const Matrix& x, std::size_t k, Metric metric, std::uint64_t seed,
                               std::size_t max_iterations = 20, double delta = 0.001) {
    const std::size_t n = x.rows();
    if (k < 1 || k >= n) throw InvalidArgument("knn requires 1 <= k < n");
    const Matrix p = detail::prepare(x, metric);
    Rng rng(seed);

    struct Entry {
        double dist;
        std::size_t idx;
        bool fresh;
    };
    std::vector<std::vector<Entry>> heaps(n);
    auto try_insert = [&](std::size_t i, std::size_t j, double d) -> bool {
        if (i == j) return false;
        auto& h = heaps[i];
        for (const auto& e : h) {
            if (e.idx == j) return false;
        }
        if (h.size() == k && !(detail::Candidate{d, j} < detail::Candidate{h.back().dist, h.back().idx})) return false;
        Entry e{d, j, true};
        auto pos = std::upper_bound(h.begin(), h.end(), e, [](const Entry& a, const Entry& b) {
            return detail::Candidate{a.dist, a.idx} < detail::Candidate{b.dist, b.idx};
        });
        h.insert(pos, e);
        if (h.size() > k) h.pop_back();
        return true;
    };

    for (std::size_t i = 0; i < n; ++i) {
        while (heaps[i].size() < k) {
            const auto j = static_cast<std::size_t>(rng.below(n));
            try_insert(i, j, detail::distance(p.row(i), p.row(j), metric));
        }
    }

    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
        std::vector<std::vector<std::size_t>> fresh(n), old(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (auto& e : heaps[i]) {
                if (e.fresh) {
                    fresh[i].push_back(e.idx);
                    fresh[e.idx].push_back(i);
                    e.fresh = false;
                } else {
                    old[i].push_back(e.idx);
                    old[e.idx].push_back(i);
                }
            }
        }
        std::size_t updates = 0;
        for (std::size_t i = 0; i < n; ++i) {
            auto& nf = fresh[i];
            auto& no = old[i];
            std::sort(nf.begin(), nf.end());
            nf.erase(std::unique(nf.begin(), nf.end()), nf.end());
            std::sort(no.begin(), no.end());
            no.erase(std::unique(no.begin(), no.end()), no.end());
            // Cap candidate lists to bound the join cost.
            const std::size_t cap = 2 * k;
            if (nf.size() > cap) {
                rng.shuffle(nf);
                nf.resize(cap);
            }
            if (no.size() > cap) {
                rng.shuffle(no);
                no.resize(cap);
            }
            for (std::size_t a = 0; a < nf.size(); ++a) {
                for (std::size_t b = a + 1; b < nf.size(); ++b) {
                    const double d = detail::distance(p.row(nf[a]), p.row(nf[b]), metric);
                    updates += try_insert(nf[a], nf[b], d);
                    updates += try_insert(nf[b], nf[a], d);
                }
                for (std::size_t b = 0; b < no.size(); ++b) {
                    if (nf[a] == no[b]) continue;
                    const double d = detail::distance(p.row(nf[a]), p.row(no[b]), metric);
                    updates += try_insert(nf[a], no[b], d);
                    updates += try_insert(no[b], nf[a], d);
                }
            }
        }
        if (static_cast<double>(updates) <= delta * static_cast<double>(n * k)) break;
    }

    KnnGraph g{n, k, std::vector<std::size_t>(n * k), std::vector<double>(n * k)};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < k; ++m) {
            g.indices[i * k + m] = heaps[i][m].idx;
            g.distances[i * k + m] = heaps[i][m].dist;
        }
    }
    return g;
}

/// Fraction of exact neighbours recovered by `approx`, measured on up to `sample` seeded points.
inline double knn_recall(const Matrix& x, const KnnGraph& approx, Metric metric, std::size_t sample,
                         std::uint64_t seed) {
    const std::size_t n = x.rows();
    const std::size_t k = approx.k;
    const Matrix p = detail::prepare(x, metric);
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(seed);
    rng.shuffle(ids);
    ids.resize(std::min(sample, n));
    std::atomic<std::size_t> hits{0};
    parallel_for(ids.size(), detail::worker_count(), [&](std::size_t s) {
        const std::size_t i = ids[s];
        std::vector<detail::Candidate> c;
        c.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) c.push_back({detail::distance(p.row(i), p.row(j), metric), j});
        }
        std::nth_element(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(k - 1), c.end());
        const double kth = c[k - 1].dist;
        // Count by distance so ties at the k-th distance are not penalized.
        std::size_t local = 0;
        for (double d : approx.dists(i)) local += d <= kth;
        hits += local;
    });
    return static_cast<double>(hits.load()) / static_cast<double>(ids.size() * k);
}

struct KnnOptions {
    std::size_t exact_threshold = 50000; ///< Brute force at or below this many points.
    double min_recall = 0.9;
    std::size_t recall_sample = 1000;
    std::uint64_t seed = 0;
};

/**
 * Exact neighbours for n <= exact_threshold, NN-descent above. The approximate
 * path is spot-checked against brute force and refined if recall falls short.
 * @throws Error if NN-descent cannot reach the recall floor.
 */
inline KnnGraph knn_graph(const Matrix& x, std::size_t k, Metric metric, const KnnOptions& opts = {}) {
    if (x.rows() <= opts.exact_threshold) return knn_exact(x, k, metric);
    for (std::size_t iterations : {20u, 60u}) {
        auto g = knn_nn_descent(x, k, metric, opts.seed, iterations);
        if (knn_recall(x, g, metric, opts.recall_sample, mix_seed(opts.seed)) >= opts.min_recall) return g;
    }
    throw Error("NN-descent recall stayed below the required floor");
}

// ---------------------------------------------------------------------------
// Fuzzy simplicial set
// ---------------------------------------------------------------------------

struct LocalScale {
    double rho = 0.0;
    double sigma = 1.0;
};

/**
 * Finds rho (smallest positive neighbour distance) and sigma such that
 * sum_j exp(-max(0, d_j - rho) / sigma) = log2(k).
 *
 * Bisection runs in log(sigma) over [1e-12, 1e12] for 64 steps; when the
 * target is unreachable sigma ends at the nearer bracket end.
 */
inline LocalScale smooth_knn_calibrate(std::span<const double> distances) {
    const std::size_t k = distances.size();
    if (k < 2) throw InvalidArgument("smooth_knn_calibrate needs k >= 2");
    LocalScale s;
    for (double d : distances) {
        if (d > 0.0) {
            s.rho = d;
            break;
        }
    }
    const double target = std::log2(static_cast<double>(k));
    auto total = [&](double sigma) {
        double sum = 0.0;
        for (double d : distances) sum += std::exp(-std::max(0.0, d - s.rho) / sigma);
        return sum;
    };
    double lo = std::log(1e-12), hi = std::log(1e12);
    for (int it = 0; it < 64; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (total(std::exp(mid)) > target) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    s.sigma = std::exp(0.5 * (lo + hi));
    return s;
}

/// Probabilistic t-conorm.
constexpr double fuzzy_union(double a, double b) noexcept { return a + b - a * b; }

struct Edge {
    std::size_t head;
    std::size_t tail;
    double weight;
};

/**
 * Symmetric weighted graph, stored once per unordered pair (head < tail),
 * sorted by (head, tail). Weights lie in (0, 1].
 */
struct FuzzyGraph {
    std::size_t n = 0;
    std::vector<Edge> edges;

    /// Both directions of every edge, sorted by (head, tail).
    [[nodiscard]] std::vector<Edge> directed() const {
        std::vector<Edge> out;
        out.reserve(edges.size() * 2);
        for (const auto& e : edges) {
            out.push_back(e);
            out.push_back({e.tail, e.head, e.weight});
        }
        std::sort(out.begin(), out.end(),
                  [](const Edge& a, const Edge& b) { return a.head < b.head || (a.head == b.head && a.tail < b.tail); });
        return out;
    }
};

inline FuzzyGraph fuzzy_simplicial_set(const KnnGraph& knn) {
    // Directed memberships keyed by (i, j) packed into one integer.
    std::vector<std::pair<std::uint64_t, double>> directed;
    directed.reserve(knn.n * knn.k);
    for (std::size_t i = 0; i < knn.n; ++i) {
        const auto scale = smooth_knn_calibrate(knn.dists(i));
        const auto nb = knn.neighbors(i);
        const auto ds = knn.dists(i);
        for (std::size_t m = 0; m < knn.k; ++m) {
            if (nb[m] == i) continue;
            const double w = std::exp(-std::max(0.0, ds[m] - scale.rho) / scale.sigma);
            if (w > 0.0) directed.emplace_back(static_cast<std::uint64_t>(i) * knn.n + nb[m], w);
        }
    }
    std::sort(directed.begin(), directed.end());
    auto lookup = [&](std::size_t i, std::size_t j) -> double {
        const std::uint64_t key = static_cast<std::uint64_t>(i) * knn.n + j;
        auto it = std::lower_bound(directed.begin(), directed.end(), std::pair<std::uint64_t, double>{key, -1.0});
        return (it != directed.end() && it->first == key) ? it->second : 0.0;
    };
    FuzzyGraph g{knn.n, {}};
    for (const auto& [key, w] : directed) {
        const std::size_t i = key / knn.n, j = key % knn.n;
        const double back = lookup(j, i);
        if (i < j) {
            g.edges.push_back({i, j, fuzzy_union(w, back)});
        } else if (back == 0.0) {
            g.edges.push_back({j, i, w});
        }
    }
    std::sort(g.edges.begin(), g.edges.end(),
              [](const Edge& a, const Edge& b) { return a.head < b.head || (a.head == b.head && a.tail < b.tail); });
    for (auto& e : g.edges) e.weight = std::min(1.0, e.weight);
    return g;
}

// ---------------------------------------------------------------------------
// Curve fit
// ---------------------------------------------------------------------------

struct CurveParams {
    double a = 0.0;
    double b = 0.0;
    double residual = 0.0; ///< Sum of squared errors at the optimum.
};

/**
 * Least-squares fit of 1 / (1 + a d^(2b)) to the target that is 1 up to
 * min_dist and decays as exp(-(d - min_dist) / spread) afterwards, sampled
 * at 300 points on [0, 3 * spread]. Levenberg-Marquardt from (1, 1).
 */
inline CurveParams fit_ab(double min_dist, double spread) {
    if (!(spread > 0.0) || min_dist < 0.0 || min_dist >= 10.0 * spread) {
        throw InvalidArgument("fit_ab requires spread > 0 and 0 <= min_dist < 10 * spread");
    }
    constexpr int samples = 300;
    std::vector<double> xs(samples), ys(samples);
    for (int i = 0; i < samples; ++i) {
        xs[i] = 3.0 * spread * i / (samples - 1);
        ys[i] = xs[i] <= min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
    }
    auto sse = [&](double a, double b) {
        double s = 0.0;
        for (int i = 0; i < samples; ++i) {
            const double r = 1.0 / (1.0 + a * std::pow(xs[i], 2.0 * b)) - ys[i];
            s += r * r;
        }
        return s;
    };
    double a = 1.0, b = 1.0, lambda = 1e-3;
    double cost = sse(a, b);
    bool converged = false;
    for (int iter = 0; iter < 1000 && !converged; ++iter) {
        double jtj00 = 0, jtj01 = 0, jtj11 = 0, g0 = 0, g1 = 0;
        for (int i = 0; i < samples; ++i) {
            const double x = xs[i];
            const double p = x > 0.0 ? std::pow(x, 2.0 * b) : 0.0;
            const double denom = 1.0 + a * p;
            const double f = 1.0 / denom;
            const double r = f - ys[i];
            const double da = -p / (denom * denom);
            const double db = x > 0.0 ? -a * p * 2.0 * std::log(x) / (denom * denom) : 0.0;
            jtj00 += da * da;
            jtj01 += da * db;
            jtj11 += db * db;
            g0 += da * r;
            g1 += db * r;
        }
        for (int tries = 0; tries < 50; ++tries) {
            const double m00 = jtj00 * (1.0 + lambda), m11 = jtj11 * (1.0 + lambda), m01 = jtj01;
            const double det = m00 * m11 - m01 * m01;
            if (det == 0.0 || !std::isfinite(det)) {
                lambda *= 10.0;
                continue;
            }
            const double step_a = -(m11 * g0 - m01 * g1) / det;
            const double step_b = -(-m01 * g0 + m00 * g1) / det;
            const double na = a + step_a, nb = b + step_b;
            const double ncost = (na > 0.0 && nb > 0.0) ? sse(na, nb) : std::numeric_limits<double>::infinity();
            if (ncost < cost) {
                converged = std::abs(step_a) <= 1e-12 * (1.0 + a) && std::abs(step_b) <= 1e-12 * (1.0 + b);
                converged = converged || (cost - ncost) <= 1e-15 * cost;
                a = na;
                b = nb;
                cost = ncost;
                lambda = std::max(lambda / 10.0, 1e-12);
                break;
            }
            lambda *= 10.0;
            if (tries == 49) converged = true; // no descent direction left
        }
    }
    if (!std::isfinite(a) || !std::isfinite(b) || a <= 0.0 || b <= 0.0) {
        throw Error("curve fit did not converge (residual " + format_double(cost) + ")");
    }
    return {a, b, cost};
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

struct LayoutConfig {
    std::size_t n_components = 5;
    std::size_t n_neighbors = 15;
    double min_dist = 0.0;
    double spread = 1.0;
    int n_epochs = -1; ///< -1: 500 below 10,000 points, else 200.
    double learning_rate = 1.0;
    double negative_sample_rate = 5.0;
    std::optional<double> a; ///< Fitted from (min_dist, spread) when unset.
    std::optional<double> b;
    std::uint64_t seed = 42;
    bool deterministic = true; ///< False allows racing multi-threaded updates.
    Metric metric = Metric::cosine;
    KnnOptions knn;

    void validate() const {
        if (n_components < 1) throw InvalidArgument("n_components must be >= 1");
        if (n_neighbors < 2) throw InvalidArgument("n_neighbors must be >= 2");
        if (!(learning_rate > 0.0) || !(negative_sample_rate > 0.0) || !(spread > 0.0)) {
            throw InvalidArgument("layout rates must be positive");
        }
    }

    [[nodiscard]] int epochs_for(std::size_t n) const {
        if (n_epochs >= 0) return n_epochs;
        return n < 10000 ? 500 : 200;
    }
};

/**
 * Spectral initialization: leading non-trivial eigenvectors of the symmetric
 * normalized graph Laplacian, found by subspace iteration on
 * (I + D^-1/2 W D^-1/2) / 2 with the trivial vector deflated.
 * Returns nullopt if the graph has isolated points or the iteration breaks down.
 */
inline std::optional<Matrix> spectral_init(const FuzzyGraph& g, std::size_t dim, std::uint64_t seed,
                                           int max_iterations = 1000, double tolerance = 1e-8) {
    const std::size_t n = g.n;
    if (n <= dim + 1) return std::nullopt;
    std::vector<double> degree(n, 0.0);
    for (const auto& e : g.edges) {
        degree[e.head] += e.weight;
        degree[e.tail] += e.weight;
    }
    std::vector<double> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(degree[i] > 0.0)) return std::nullopt;
        inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);
    }
    Eigen::VectorXd trivial(n);
    for (std::size_t i = 0; i < n; ++i) trivial(static_cast<Eigen::Index>(i)) = std::sqrt(degree[i]);
    trivial.normalize();

    auto apply = [&](const Eigen::MatrixXd& x) {
        Eigen::MatrixXd y = 0.5 * x;
        for (const auto& e : g.edges) {
            const double w = 0.5 * e.weight * inv_sqrt[e.head] * inv_sqrt[e.tail];
            const auto h = static_cast<Eigen::Index>(e.head), t = static_cast<Eigen::Index>(e.tail);
            y.row(h) += w * x.row(t);
            y.row(t) += w * x.row(h);
        }
        return y;
    };

    const auto block = static_cast<Eigen::Index>(std::min(n - 1, dim + 4));
    Rng rng(seed);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), block);
    for (Eigen::Index j = 0; j < block; ++j) {
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) x(i, j) = rng.normal();
    }
    auto orthonormalize = [&](Eigen::MatrixXd& m) {
        m -= trivial * (trivial.transpose() * m);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
        m = qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), m.cols());
    };
    orthonormalize(x);

    Eigen::VectorXd previous = Eigen::VectorXd::Zero(block);
    Eigen::VectorXd ritz;
    for (int it = 0; it < max_iterations; ++it) {
        x = apply(x);
        orthonormalize(x);
        if (it % 10 == 9 || it == max_iterations - 1) {
            Eigen::MatrixXd h = x.transpose() * apply(x);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h + h.transpose()));
            if (es.info() != Eigen::Success) return std::nullopt;
            // Ascending eigenvalues; reverse so the leading pairs come first.
            x = x * es.eigenvectors().rowwise().reverse();
            ritz = es.eigenvalues().reverse();
            const double change = (ritz.head(static_cast<Eigen::Index>(dim)) -
                                   previous.head(static_cast<Eigen::Index>(dim))).cwiseAbs().maxCoeff();
            previous = ritz;
            if (change < tolerance) break;
        }
    }
    if (!x.allFinite()) return std::nullopt;

    Matrix out(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < dim; ++d) {
            out(i, d) = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
        }
    }
    return out;
}

namespace detail {

/// Affine map of each column to [0, 10].
inline void rescale_columns(Matrix& m) {
    for (std::size_t d = 0; d < m.cols(); ++d) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t i = 0; i < m.rows(); ++i) {
            lo = std::min(lo, m(i, d));
            hi = std::max(hi, m(i, d));
        }
        const double span = hi - lo;
        for (std::size_t i = 0; i < m.rows(); ++i) m(i, d) = span > 0.0 ? 10.0 * (m(i, d) - lo) / span : 0.0;
    }
}

inline double clip(double v) { return std::clamp(v, -4.0, 4.0); }

} // namespace detail

/**
 * Initial coordinates: spectral embedding scaled to max |x| = 10 plus N(0, 1e-4) noise,
 * or a seeded N(0, 1e-4) cloud if the eigensolve fails; then each column is mapped to [0, 10].
 */
inline Matrix initial_layout(const FuzzyGraph& g, std::size_t dim, std::uint64_t seed, bool* used_spectral = nullptr) {
    Rng rng(mix_seed(seed ^ 0x1217));
    auto spectral = spectral_init(g, dim, seed);
    Matrix init;
    if (spectral) {
        init = std::move(*spectral);
        double max_abs = 0.0;
        for (double v : init.data()) max_abs = std::max(max_abs, std::abs(v));
        const double expansion = max_abs > 0.0 ? 10.0 / max_abs : 1.0;
        for (double& v : init.data()) v = v * expansion + 1e-4 * rng.normal();
    } else {
        init = Matrix(g.n, dim);
        for (double& v : init.data()) v = 1e-4 * rng.normal();
    }
    if (used_spectral) *used_spectral = spectral.has_value();
    detail::rescale_columns(init);
    return init;
}

/**
 * Stochastic gradient descent on the layout.
 *
 * Each directed edge is sampled once every `epochs_per_sample` epochs, where
 * that period is inversely proportional to its weight; each sample applies an
 * attractive update to both endpoints and `negative_sample_rate` repulsive
 * updates against uniformly drawn points. Per-component gradients are clipped
 * to [-4, 4] and the learning rate decays linearly to 0.
 *
 * @throws InvalidArgument if the graph has no edges.
 */
inline Matrix optimize_layout(const FuzzyGraph& graph, Matrix embedding, const LayoutConfig& cfg) {
    cfg.validate();
    if (graph.edges.empty()) throw InvalidArgument("cannot lay out a graph with no edges");
    const int n_epochs = cfg.epochs_for(graph.n);
    if (n_epochs == 0) return embedding;
    const double a = cfg.a.value_or(0.0), b = cfg.b.value_or(0.0);
    if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("optimize_layout needs fitted curve parameters");

    auto edges = graph.directed();
    double wmax = 0.0;
    for (const auto& e : edges) wmax = std::max(wmax, e.weight);
    // Edges too weak to be sampled even once over the run are dropped.
    std::erase_if(edges, [&](const Edge& e) { return e.weight < wmax / n_epochs; });

    const std::size_t m = edges.size();
    std::vector<double> eps(m), next_sample(m), eps_neg(m), next_neg(m);
    for (std::size_t i = 0; i < m; ++i) {
        eps[i] = n_epochs / (n_epochs * (edges[i].weight / wmax));
        next_sample[i] = eps[i];
        eps_neg[i] = eps[i] / cfg.negative_sample_rate;
        next_neg[i] = eps_neg[i];
    }

    const std::size_t dim = embedding.cols();
    const std::size_t n = embedding.rows();
    auto process = [&](std::size_t lo, std::size_t hi, int epoch, double alpha, Rng& rng, auto load, auto store) {
        std::vector<double> cur(dim), other(dim);
        for (std::size_t i = lo; i < hi; ++i) {
            if (next_sample[i] > epoch) continue;
            const std::size_t j = edges[i].head, k = edges[i].tail;
            for (std::size_t d = 0; d < dim; ++d) {
                cur[d] = load(j, d);
                other[d] = load(k, d);
            }
            double dist_sq = 0.0;
            for (std::size_t d = 0; d < dim; ++d) dist_sq += (cur[d] - other[d]) * (cur[d] - other[d]);
            double coeff = 0.0;
            if (dist_sq > 0.0) {
                coeff = -2.0 * a * b * std::pow(dist_sq, b - 1.0) / (a * std::pow(dist_sq, b) + 1.0);
            }
            for (std::size_t d = 0; d < dim; ++d) {
                const double grad = detail::clip(coeff * (cur[d] - other[d]));
                cur[d] += grad * alpha;
                other[d] -= grad * alpha;
            }
            for (std::size_t d = 0; d < dim; ++d) {
                store(j, d, cur[d]);
                store(k, d, other[d]);
            }
            next_sample[i] += eps[i];

            const auto n_neg = static_cast<long>((epoch - next_neg[i]) / eps_neg[i]);
            for (long p = 0; p < n_neg; ++p) {
                const auto r = static_cast<std::size_t>(rng.below(n));
                if (r == j) continue;
                for (std::size_t d = 0; d < dim; ++d) other[d] = load(r, d);
                dist_sq = 0.0;
                for (std::size_t d = 0; d < dim; ++d) dist_sq += (cur[d] - other[d]) * (cur[d] - other[d]);
                coeff = dist_sq > 0.0 ? 2.0 * b / ((0.001 + dist_sq) * (a * std::pow(dist_sq, b) + 1.0)) : 0.0;
                for (std::size_t d = 0; d < dim; ++d) {
                    const double grad = coeff > 0.0 ? detail::clip(coeff * (cur[d] - other[d])) : 4.0;
                    cur[d] += grad * alpha;
                }
            }
            for (std::size_t d = 0; d < dim; ++d) store(j, d, cur[d]);
            next_neg[i] += static_cast<double>(n_neg) * eps_neg[i];
        }
    };

    auto& data = embedding.data();
    if (cfg.deterministic) {
        Rng rng(mix_seed(cfg.seed));
        auto load = [&](std::size_t i, std::size_t d) { return data[i * dim + d]; };
        auto store = [&](std::size_t i, std::size_t d, double v) { data[i * dim + d] = v; };
        for (int epoch = 0; epoch < n_epochs; ++epoch) {
            const double alpha = cfg.learning_rate * (1.0 - static_cast<double>(epoch) / n_epochs);
            process(0, m, epoch, alpha, rng, load, store);
        }
    } else {
        // Hogwild-style: threads own disjoint edge ranges but share coordinates.
        auto load = [&](std::size_t i, std::size_t d) {
            return std::atomic_ref<double>(data[i * dim + d]).load(std::memory_order_relaxed);
        };
        auto store = [&](std::size_t i, std::size_t d, double v) {
            std::atomic_ref<double>(data[i * dim + d]).store(v, std::memory_order_relaxed);
        };
        const std::size_t workers = detail::worker_count();
        std::vector<Rng> rngs;
        for (std::size_t w = 0; w < workers; ++w) rngs.emplace_back(mix_seed(cfg.seed + w));
        for (int epoch = 0; epoch < n_epochs; ++epoch) {
            const double alpha = cfg.learning_rate * (1.0 - static_cast<double>(epoch) / n_epochs);
            parallel_for(workers, workers, [&](std::size_t w) {
                const std::size_t lo = m * w / workers, hi = m * (w + 1) / workers;
                process(lo, hi, epoch, alpha, rngs[w], load, store);
            });
        }
    }
    return embedding;
}

struct ReduceResult {
    Matrix points;
    KnnGraph knn;
    CurveParams curve;
    bool spectral = false;
};

/**
 * Full reduction: neighbours, fuzzy graph, curve fit, initialization, SGD.
 * @throws InvalidArgument if there are fewer than n_neighbors + 1 points.
 */
inline ReduceResult reduce_detailed(const Matrix& vectors, const LayoutConfig& cfg_in) {
    LayoutConfig cfg = cfg_in;
    cfg.validate();
    if (vectors.rows() < cfg.n_neighbors + 1) {
        throw InvalidArgument("reduce needs at least n_neighbors + 1 points (got " + std::to_string(vectors.rows()) +
                              ")");
    }
    ReduceResult r;
    auto knn_opts = cfg.knn;
    knn_opts.seed = cfg.seed;
    r.knn = knn_graph(vectors, cfg.n_neighbors, cfg.metric, knn_opts);
    const auto graph = fuzzy_simplicial_set(r.knn);
    r.curve = fit_ab(cfg.min_dist, cfg.spread);
    if (!cfg.a) cfg.a = r.curve.a;
    if (!cfg.b) cfg.b = r.curve.b;
    auto init = initial_layout(graph, cfg.n_components, cfg.seed, &r.spectral);
    r.points = optimize_layout(graph, std::move(init), cfg);
    return r;
}

inline Matrix reduce(const Matrix& vectors, const LayoutConfig& cfg) { return reduce_detailed(vectors, cfg).points; }

inline Matrix reduce(const Matrix& vectors, std::size_t n_components, std::uint64_t seed) {
    LayoutConfig cfg;
    cfg.n_components = n_components;
    cfg.seed = seed;
    return reduce(vectors, cfg);
}

} // namespace narrative::manifold
