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

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

/**
 * @file density.hpp
 *
 * @brief HDBSCAN: mutual-reachability MST, condensed cluster tree and
 * excess-of-mass cluster selection.
 *
 * Equal-weight MST edges are merged as one level, so a cluster may split into
 * more than two parts at a single lambda. That makes the condensed tree a
 * function of the point set alone, independent of which of several equal-weight
 * spanning trees Prim happens to return. Without ties it coincides with the
 * usual binary construction.
 */

namespace narrative::density {

struct DensityConfig {
    std::size_t min_samples = 100;
    std::size_t min_cluster_size = 400;
    bool allow_single_cluster = false;

    void validate() const {
        if (min_samples < 1) throw InvalidArgument("min_samples must be >= 1");
        if (min_cluster_size < 2) throw InvalidArgument("min_cluster_size must be >= 2");
    }
};

/// Label for points outside every selected cluster.
inline constexpr int kNoise = -1;

struct ClusterAssignment {
    std::vector<int> labels; ///< Per point; clusters are 0..n_clusters-1 by decreasing size.
    std::size_t n_clusters = 0;

    [[nodiscard]] std::vector<std::size_t> sizes() const {
        std::vector<std::size_t> s(n_clusters, 0);
        for (int l : labels) {
            if (l >= 0) ++s[static_cast<std::size_t>(l)];
        }
        return s;
    }
};

/**
 * Distance to the min_samples-th nearest neighbour, the point itself counting
 * as neighbour 1 (so min_samples = 1 gives 0). Euclidean metric.
 */
inline std::vector<double> core_distances(const Matrix& points, std::size_t min_samples) {
    const std::size_t n = points.rows();
    if (min_samples < 1 || min_samples > n) throw InvalidArgument("core_distances requires 1 <= min_samples <= n");
    std::vector<double> cores(n);
    parallel_for(n, std::max(1u, std::thread::hardware_concurrency()), [&](std::size_t i) {
        std::vector<double> d(n);
        for (std::size_t j = 0; j < n; ++j) d[j] = euclidean(points.row(i), points.row(j));
        d[i] = 0.0;
        std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(min_samples - 1), d.end());
        cores[i] = d[min_samples - 1];
    });
    return cores;
}

constexpr double mutual_reachability_distance(double d_ab, double core_a, double core_b) noexcept {
    return std::max({core_a, core_b, d_ab});
}

struct MstEdge {
    std::size_t a;
    std::size_t b;
    double weight;
};

/**
 * Minimum spanning tree of the complete mutual-reachability graph by Prim's
 * algorithm on the implicit graph: O(n^2) time, O(n) memory.
 */
inline std::vector<MstEdge> build_mst(const Matrix& points, std::span<const double> cores) {
    const std::size_t n = points.rows();
    if (cores.size() != n) throw InvalidArgument("build_mst: one core distance per point required");
    std::vector<MstEdge> edges;
    if (n <= 1) return edges;
    edges.reserve(n - 1);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> from(n, 0);
    std::vector<char> in_tree(n, 0);
    std::size_t current = 0;
    in_tree[0] = 1;
    for (std::size_t step = 1; step < n; ++step) {
        std::size_t next = n;
        double next_w = std::numeric_limits<double>::infinity();
        const auto row = points.row(current);
        for (std::size_t j = 0; j < n; ++j) {
            if (in_tree[j]) continue;
            const double w = mutual_reachability_distance(euclidean(row, points.row(j)), cores[current], cores[j]);
            if (w < best[j]) {
                best[j] = w;
                from[j] = current;
            }
            if (best[j] < next_w || next == n) {
                next_w = best[j];
                next = j;
            }
        }
        in_tree[next] = 1;
        edges.push_back({from[next], next, best[next]});
        current = next;
    }
    return edges;
}

/**
 * Condensed hierarchy. Node ids below `n_points` are points; `n_points` is the
 * root cluster and later cluster ids follow in creation order (parents first).
 */
struct CondensedTree {
    struct Entry {
        std::size_t parent;
        std::size_t child;
        double lambda; ///< 1 / distance at which the child leaves the parent.
        std::size_t size;
    };

    std::size_t n_points = 0;
    std::size_t n_clusters = 0; ///< Including the root.
    std::vector<Entry> entries;

    [[nodiscard]] std::size_t root() const noexcept { return n_points; }
    [[nodiscard]] bool is_cluster(std::size_t id) const noexcept { return id >= n_points; }
};

namespace detail {

class DisjointSet {
public:
    explicit DisjointSet(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    std::size_t unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return a;
        if (rank_[a] < rank_[b]) std::swap(a, b);
        parent_[b] = a;
        if (rank_[a] == rank_[b]) ++rank_[a];
        return a;
    }

private:
    std::vector<std::size_t> parent_;
    std::vector<std::size_t> rank_;
};

struct DendroNode {
    double distance = 0.0;
    std::size_t size = 1;
    std::vector<std::size_t> children;
};

inline double lambda_of(double distance) {
    return distance > 0.0 ? 1.0 / distance : std::numeric_limits<double>::infinity();
}

} // namespace detail

/**
 * Builds the condensed tree from MST edges. Components merging at the same
 * weight form one multi-way dendrogram node. Walking down from the root, a
 * split into parts of which at least two reach `min_cluster_size` creates child
 * clusters; parts below the size shed their points at that lambda; a single
 * large part continues as the same cluster.
 */
inline CondensedTree condense_tree(std::span<const MstEdge> mst, std::size_t n_points, std::size_t min_cluster_size) {
    CondensedTree tree;
    tree.n_points = n_points;
    if (n_points == 0) return tree;
    tree.n_clusters = 1;
    if (mst.size() + 1 != n_points) throw InvalidArgument("condense_tree: an MST over n points has n - 1 edges");

    std::vector<MstEdge> sorted(mst.begin(), mst.end());
    std::sort(sorted.begin(), sorted.end(), [](const MstEdge& x, const MstEdge& y) { return x.weight < y.weight; });

    std::vector<detail::DendroNode> nodes(n_points);
    detail::DisjointSet uf(n_points);
    std::vector<std::size_t> node_of(n_points);
    std::iota(node_of.begin(), node_of.end(), 0);
    for (std::size_t lo = 0; lo < sorted.size();) {
        std::size_t hi = lo;
        while (hi < sorted.size() && sorted[hi].weight == sorted[lo].weight) ++hi;
        std::vector<std::pair<std::size_t, std::size_t>> pre; // (pre-level root, its dendro node)
        for (std::size_t e = lo; e < hi; ++e) {
            for (auto p : {sorted[e].a, sorted[e].b}) {
                const auto r = uf.find(p);
                pre.emplace_back(r, node_of[r]);
            }
        }
        std::sort(pre.begin(), pre.end());
        pre.erase(std::unique(pre.begin(), pre.end()), pre.end());
        for (std::size_t e = lo; e < hi; ++e) uf.unite(sorted[e].a, sorted[e].b);
        // Group pre-level components by their post-level root.
        std::vector<std::pair<std::size_t, std::size_t>> grouped; // (new root, dendro child)
        for (const auto& [r, node] : pre) grouped.emplace_back(uf.find(r), node);
        std::sort(grouped.begin(), grouped.end());
        for (std::size_t g = 0; g < grouped.size();) {
            std::size_t h = g;
            detail::DendroNode merged;
            merged.distance = sorted[lo].weight;
            merged.size = 0;
            while (h < grouped.size() && grouped[h].first == grouped[g].first) {
                merged.children.push_back(grouped[h].second);
                merged.size += nodes[grouped[h].second].size;
                ++h;
            }
            node_of[grouped[g].first] = nodes.size();
            nodes.push_back(std::move(merged));
            g = h;
        }
        lo = hi;
    }

    auto shed = [&](std::size_t start, std::size_t cluster, double lambda) {
        std::vector<std::size_t> stack{start};
        while (!stack.empty()) {
            const auto d = stack.back();
            stack.pop_back();
            if (d < n_points) {
                tree.entries.push_back({cluster, d, lambda, 1});
            } else {
                for (auto c : nodes[d].children) stack.push_back(c);
            }
        }
    };

    const std::size_t top = nodes.size() - 1;
    if (top < n_points) {
        // Single point, no merges.
        tree.entries.push_back({tree.root(), 0, 0.0, 1});
        return tree;
    }
    std::vector<std::pair<std::size_t, std::size_t>> work{{top, tree.root()}}; // (dendro node, cluster id)
    while (!work.empty()) {
        auto [d, cluster] = work.back();
        work.pop_back();
        while (true) {
            const auto& node = nodes[d];
            const double lambda = detail::lambda_of(node.distance);
            std::vector<std::size_t> big;
            for (auto c : node.children) {
                if (nodes[c].size >= min_cluster_size) big.push_back(c);
            }
            if (big.size() >= 2) {
                for (auto c : node.children) {
                    if (nodes[c].size >= min_cluster_size) {
                        const std::size_t id = n_points + tree.n_clusters++;
                        tree.entries.push_back({cluster, id, lambda, nodes[c].size});
                        work.emplace_back(c, id);
                    } else {
                        shed(c, cluster, lambda);
                    }
                }
                break;
            }
            for (auto c : node.children) {
                if (big.empty() || c != big.front()) shed(c, cluster, lambda);
            }
            if (big.empty() || big.front() < n_points) {
                if (!big.empty()) shed(big.front(), cluster, lambda);
                break;
            }
            d = big.front();
        }
    }
    return tree;
}

namespace detail {

/// Relabels so clusters are numbered by decreasing size, ties by smallest member index.
inline ClusterAssignment canonical_labels(std::vector<long> raw) {
    std::map<long, std::pair<std::size_t, std::size_t>> info; // raw -> (size, first index)
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] < 0) continue;
        auto [it, inserted] = info.try_emplace(raw[i], 0, i);
        ++it->second.first;
    }
    std::vector<std::pair<long, std::pair<std::size_t, std::size_t>>> order(info.begin(), info.end());
    std::sort(order.begin(), order.end(), [](const auto& x, const auto& y) {
        if (x.second.first != y.second.first) return x.second.first > y.second.first;
        return x.second.second < y.second.second;
    });
    std::map<long, int> remap;
    for (std::size_t i = 0; i < order.size(); ++i) remap[order[i].first] = static_cast<int>(i);
    ClusterAssignment out;
    out.n_clusters = order.size();
    out.labels.resize(raw.size(), kNoise);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] >= 0) out.labels[i] = remap[raw[i]];
    }
    return out;
}

} // namespace detail

/**
 * Excess-of-mass selection. stability(C) = sum over points of (lambda_p - lambda_birth(C)),
 * a point's lambda being where it leaves C (alone or inside a child cluster).
 * Bottom-up, a cluster is replaced by its children when their summed stability
 * is strictly larger. The root is a candidate only with allow_single_cluster
 * and when it meets min_cluster_size.
 */
inline ClusterAssignment extract_clusters_eom(const CondensedTree& tree, const DensityConfig& cfg) {
    const std::size_t n = tree.n_points;
    const std::size_t m = tree.n_clusters;
    if (n == 0) return {};
    std::vector<double> birth(m, 0.0);
    std::vector<std::size_t> parent(m, 0);
    std::vector<std::vector<std::size_t>> kids(m);
    std::vector<std::size_t> point_parent(n, tree.root());
    for (const auto& e : tree.entries) {
        if (tree.is_cluster(e.child)) {
            birth[e.child - n] = e.lambda;
            parent[e.child - n] = e.parent - n;
            kids[e.parent - n].push_back(e.child - n);
        } else {
            point_parent[e.child] = e.parent;
        }
    }
    std::vector<double> stability(m, 0.0);
    for (const auto& e : tree.entries) {
        const std::size_t c = e.parent - n;
        if (e.lambda != birth[c]) stability[c] += (e.lambda - birth[c]) * static_cast<double>(e.size);
    }

    const bool root_candidate = cfg.allow_single_cluster && n >= cfg.min_cluster_size;
    std::vector<char> selected(m, 0);
    for (std::size_t c = m; c-- > 0;) {
        if (c == 0 && !root_candidate) break;
        if (kids[c].empty()) {
            selected[c] = 1;
            continue;
        }
        double subtree = 0.0;
        for (auto k : kids[c]) subtree += stability[k];
        if (subtree > stability[c]) {
            stability[c] = subtree;
        } else {
            selected[c] = 1;
            std::vector<std::size_t> stack(kids[c].begin(), kids[c].end());
            while (!stack.empty()) {
                auto k = stack.back();
                stack.pop_back();
                selected[k] = 0;
                stack.insert(stack.end(), kids[k].begin(), kids[k].end());
            }
        }
    }
    if (!root_candidate) selected[0] = 0;

    // Parents precede children in id order, so one forward pass resolves ancestors.
    std::vector<long> owner(m, -1);
    for (std::size_t c = 0; c < m; ++c) {
        if (selected[c]) {
            owner[c] = static_cast<long>(c);
        } else if (c > 0) {
            owner[c] = owner[parent[c]];
        }
    }
    std::vector<long> raw(n, -1);
    for (std::size_t p = 0; p < n; ++p) raw[p] = owner[point_parent[p] - n];
    return detail::canonical_labels(std::move(raw));
}

/**
 * core distances, MST, condensed tree, EOM.
 * @throws InvalidArgument if min_samples exceeds the number of points.
 */
inline ClusterAssignment cluster(const Matrix& points, const DensityConfig& cfg) {
    cfg.validate();
    const std::size_t n = points.rows();
    if (n == 0) throw InvalidArgument("cannot cluster an empty point set");
    if (cfg.min_samples > n) throw InvalidArgument("min_samples exceeds the number of points");
    const auto cores = core_distances(points, cfg.min_samples);
    const auto mst = build_mst(points, cores);
    const auto tree = condense_tree(mst, n, cfg.min_cluster_size);
    return extract_clusters_eom(tree, cfg);
}

inline nlohmann::json to_json(const ClusterAssignment& a, const DensityConfig& cfg) {
    return {{"min_cluster_size", cfg.min_cluster_size},
            {"min_samples", cfg.min_samples},
            {"labels", a.labels},
            {"n_clusters", a.n_clusters}};
}

inline ClusterAssignment assignment_from_json(const nlohmann::json& j) {
    ClusterAssignment a;
    a.labels = j.at("labels").get<std::vector<int>>();
    a.n_clusters = j.at("n_clusters").get<std::size_t>();
    for (int l : a.labels) {
        if (l < kNoise || (l >= 0 && static_cast<std::size_t>(l) >= a.n_clusters)) {
            throw FormatError("cluster label out of range");
        }
    }
    return a;
}

} // namespace narrative::density
