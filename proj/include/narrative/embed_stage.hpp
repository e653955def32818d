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
#include "llm_gateway.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

/**
 * @file embed_stage.hpp
 *
 * @brief Instruction-conditioned, unit-norm post embeddings with a content-addressed cache.
 */

namespace narrative::embed {

/// Default embedding instruction (note the trailing space).
inline constexpr std::string_view kDefaultInstruction =
    "Identify the strategic narrative, manipulative intent, and underlying disinformation motive in the "
    "following text: ";

struct EmbeddingVector {
    std::string post_id;
    std::vector<double> values;
};

/**
 * @throws InvalidArgument for an empty, zero or non-finite vector.
 */
inline std::vector<double> l2_normalize(std::span<const double> v) {
    if (v.empty()) throw InvalidArgument("cannot normalize an empty vector");
    double s = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) throw InvalidArgument("cannot normalize a non-finite vector");
        s += x * x;
    }
    const double norm = std::sqrt(s);
    if (!(norm > 0.0) || !std::isfinite(norm)) throw InvalidArgument("cannot normalize a zero vector");
    std::vector<double> out(v.begin(), v.end());
    for (double& x : out) x /= norm;
    return out;
}

/// 1 - a.b for unit vectors, clamped to [0, 2].
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("cosine_distance: dimension mismatch");
    return std::clamp(1.0 - dot(a, b), 0.0, 2.0);
}

// ---------------------------------------------------------------------------
// Binary vector file
//
//   magic    8 bytes  "NARREMB1"
//   dim      u32 LE
//   count    u64 LE
//   payload  count * dim f32 LE, row-major
//   ids      count * (u32 LE length, bytes)
// ---------------------------------------------------------------------------

inline constexpr std::string_view kMagic = "NARREMB1";

struct VectorFile {
    std::size_t dim = 0;
    std::vector<std::string> ids;
    std::vector<float> values; ///< ids.size() * dim

    [[nodiscard]] std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw FormatError("vector file truncated");
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    pos += sizeof(T);
    return static_cast<T>(u);
}

} // namespace detail

inline std::string encode_vectors(const VectorFile& f) {
    if (f.values.size() != f.ids.size() * f.dim) throw InvalidArgument("vector file shape mismatch");
    std::string out(kMagic);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.dim));
    detail::put_le<std::uint64_t>(out, f.ids.size());
    out.reserve(out.size() + f.values.size() * 4);
    for (float v : f.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    for (const auto& id : f.ids) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
        out += id;
    }
    return out;
}

inline VectorFile decode_vectors(std::string_view in) {
    if (in.substr(0, kMagic.size()) != kMagic) throw FormatError("bad vector file magic");
    std::size_t pos = kMagic.size();
    VectorFile f;
    f.dim = detail::get_le<std::uint32_t>(in, pos);
    const auto count = detail::get_le<std::uint64_t>(in, pos);
    if (count > 0 && (f.dim == 0 || count > (in.size() - pos) / 4 / f.dim)) {
        throw FormatError("vector file header inconsistent with size");
    }
    f.values.resize(count * f.dim);
    for (auto& v : f.values) v = std::bit_cast<float>(detail::get_le<std::uint32_t>(in, pos));
    f.ids.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = detail::get_le<std::uint32_t>(in, pos);
        if (pos + len > in.size()) throw FormatError("vector file id index truncated");
        f.ids.emplace_back(in.substr(pos, len));
        pos += len;
    }
    if (pos != in.size()) throw FormatError("trailing bytes in vector file");
    return f;
}

inline void save_vectors(const std::filesystem::path& path, const VectorFile& f) {
    write_file_atomic(path, encode_vectors(f));
}

inline VectorFile load_vectors(const std::filesystem::path& path) { return decode_vectors(read_file(path)); }

/// Widens a stored row and re-normalizes it; the single path both fresh and cached vectors take.
inline std::vector<double> widen_unit(std::span<const float> row) {
    std::vector<double> v(row.begin(), row.end());
    return l2_normalize(v);
}

/**
 * Content-addressed embedding cache: key = sha256(model id, sha256(instruction), sha256(text)).
 * One writer, many readers. An unreadable cache file is discarded and rebuilt.
 */
class EmbeddingCache {
public:
    EmbeddingCache() = default;
    explicit EmbeddingCache(std::filesystem::path path) : path_(std::move(path)) {
        if (!std::filesystem::exists(path_)) return;
        try {
            auto f = load_vectors(path_);
            dim_ = f.dim;
            for (std::size_t i = 0; i < f.ids.size(); ++i) {
                auto r = f.row(i);
                entries_.emplace(f.ids[i], std::vector<float>(r.begin(), r.end()));
            }
        } catch (const Error&) {
            entries_.clear();
            dim_ = 0;
            rebuilt_ = true;
        }
    }

    static std::string key(std::string_view model_id, std::string_view instruction, std::string_view text) {
        return sha256_hex(std::string(model_id) + '\n' + sha256_hex(instruction) + '\n' + sha256_hex(text));
    }

    /// Cached unit vector, or empty if absent or unusable.
    [[nodiscard]] std::vector<double> get(const std::string& k) const {
        std::shared_lock lock(mutex_);
        auto it = entries_.find(k);
        if (it == entries_.end()) return {};
        try {
            return widen_unit(it->second);
        } catch (const InvalidArgument&) {
            return {};
        }
    }

    void put(const std::string& k, std::span<const double> unit) {
        std::unique_lock lock(mutex_);
        if (dim_ != 0 && unit.size() != dim_) {
            // Dimension changed (new model behind the same id); stale entries are useless.
            entries_.clear();
        }
        dim_ = unit.size();
        entries_.insert_or_assign(k, std::vector<float>(unit.begin(), unit.end()));
        dirty_ = true;
    }

    void flush() {
        std::unique_lock lock(mutex_);
        if (path_.empty() || !dirty_) return;
        VectorFile f;
        f.dim = dim_;
        std::vector<std::string> keys;
        keys.reserve(entries_.size());
        for (const auto& [k, _] : entries_) keys.push_back(k);
        std::sort(keys.begin(), keys.end());
        for (const auto& k : keys) {
            f.ids.push_back(k);
            const auto& v = entries_.at(k);
            f.values.insert(f.values.end(), v.begin(), v.end());
        }
        save_vectors(path_, f);
        dirty_ = false;
    }

    [[nodiscard]] std::size_t size() const {
        std::shared_lock lock(mutex_);
        return entries_.size();
    }
    [[nodiscard]] bool rebuilt() const noexcept { return rebuilt_; }

private:
    std::filesystem::path path_;
    mutable std::shared_mutex mutex_;
    std::unordered_map<std::string, std::vector<float>> entries_;
    std::size_t dim_ = 0;
    bool dirty_ = false;
    bool rebuilt_ = false;
};

struct EmbedStats {
    std::size_t cache_hits = 0;
    std::size_t fetched = 0;
};

/**
 * Embeds post texts in input order. Cache hits skip the wire; misses go through
 * `embed_batch`. Every output is re-normalized locally (after float32 rounding,
 * so fresh and cached runs agree bit for bit).
 */
inline std::vector<EmbeddingVector> embed_posts(llm::Gateway& gateway, std::span<const corpus::Post> posts,
                                                std::string_view instruction, EmbeddingCache& cache,
                                                EmbedStats* stats = nullptr) {
    const auto& model = gateway.config().embed_model_id;
    std::vector<EmbeddingVector> out(posts.size());
    std::vector<std::size_t> misses;
    std::vector<std::string> keys(posts.size());
    for (std::size_t i = 0; i < posts.size(); ++i) {
        out[i].post_id = posts[i].id;
        keys[i] = EmbeddingCache::key(model, instruction, posts[i].text);
        out[i].values = cache.get(keys[i]);
        if (out[i].values.empty()) misses.push_back(i);
    }
    if (!misses.empty()) {
        std::vector<std::string> texts;
        texts.reserve(misses.size());
        for (auto i : misses) texts.push_back(posts[i].text);
        auto fetched = gateway.embed_batch(texts, std::string(instruction));
        for (std::size_t k = 0; k < misses.size(); ++k) {
            const auto unit = l2_normalize(fetched[k]);
            std::vector<float> rounded(unit.begin(), unit.end());
            cache.put(keys[misses[k]], unit);
            out[misses[k]].values = widen_unit(rounded);
        }
        cache.flush();
    }
    const std::size_t dim = out.empty() ? 0 : out.front().values.size();
    for (const auto& e : out) {
        if (e.values.size() != dim) throw llm::GatewayError("embedding dimension inconsistent within run");
    }
    if (stats) {
        stats->cache_hits = posts.size() - misses.size();
        stats->fetched = misses.size();
    }
    return out;
}

inline Matrix to_matrix(std::span<const EmbeddingVector> vectors) {
    if (vectors.empty()) return {};
    Matrix m(vectors.size(), vectors.front().values.size());
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        std::copy(vectors[i].values.begin(), vectors[i].values.end(), m.row(i).begin());
    }
    return m;
}

/// Writes `embeddings.bin` plus the sidecar manifest next to it.
inline void save_run_embeddings(const std::filesystem::path& bin_path, std::span<const EmbeddingVector> vectors,
                                std::string_view model_id, std::string_view instruction) {
    VectorFile f;
    f.dim = vectors.empty() ? 0 : vectors.front().values.size();
    for (const auto& v : vectors) {
        f.ids.push_back(v.post_id);
        f.values.insert(f.values.end(), v.values.begin(), v.values.end());
    }
    save_vectors(bin_path, f);
    auto manifest_path = bin_path;
    manifest_path.replace_extension(".manifest.json");
    nlohmann::json m{{"model_id", model_id},
                     {"instruction_sha256", sha256_hex(instruction)},
                     {"dimension", f.dim},
                     {"count", f.ids.size()}};
    write_file_atomic(manifest_path, m.dump(2) + "\n");
}

inline std::vector<EmbeddingVector> load_run_embeddings(const std::filesystem::path& bin_path) {
    auto f = load_vectors(bin_path);
    std::vector<EmbeddingVector> out;
    out.reserve(f.ids.size());
    for (std::size_t i = 0; i < f.ids.size(); ++i) out.push_back({f.ids[i], widen_unit(f.row(i))});
    return out;
}

} // namespace narrative::embed
