#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dfrd/error.hpp"
#include "dfrd/rng.hpp"

// Rank and reciprocal-rank-feature (RRF) encodings. An RRF vector keeps the
// top-k ranked indices of an N-dimensional score map; the entry at (1-based)
// position p carries the implied value 1/p. It is the universal input format
// for every teacher and student in this project: dense score maps are ranked,
// truncated to k entries, and the sparse result is expanded back to a dense
// vector only at the model boundary.

namespace dfrd {

using ScoreVector = std::vector<double>;

inline constexpr std::uint32_t default_k = 10;

// ranks[i] is the 1-based rank of index i; rank 1 is the best score.
struct RankVector {
    std::vector<std::uint32_t> ranks;
};

// Top-k indices in rank order over a dim-sized index space. entries[p] holds
// the index ranked p+1, with implied value 1/(p+1).
struct RrfVector {
    std::uint32_t dim = 0;
    std::uint32_t k = 0;
    std::vector<std::uint32_t> entries;

    static double value_at(std::size_t position) { return 1.0 / static_cast<double>(position + 1); }

    bool operator==(const RrfVector&) const = default;
};

struct OneHotLabel {
    std::uint32_t class_id = 0;

    bool operator==(const OneHotLabel&) const = default;
};

inline void check_finite(const ScoreVector& scores, const char* who) {
    for (double v : scores) {
        if (!std::isfinite(v)) throw InvalidInput(std::string(who) + ": non-finite value");
    }
}

// Rank by descending score; ties go to the lower index.
inline RankVector rank_of(const ScoreVector& scores) {
    if (scores.empty()) throw InvalidInput("rank_of: empty score vector");
    check_finite(scores, "rank_of");
    const std::size_t n = scores.size();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    RankVector out;
    out.ranks.resize(n);
    for (std::uint32_t pos = 0; pos < n; ++pos) out.ranks[order[pos]] = pos + 1;
    return out;
}

// Keep the indices ranked 1..min(k, N), in rank order.
inline RrfVector rrf_encode(const RankVector& ranks, std::uint32_t k) {
    if (k == 0) throw InvalidInput("rrf_encode: k must be positive");
    const auto n = static_cast<std::uint32_t>(ranks.ranks.size());
    if (n == 0) throw InvalidInput("rrf_encode: empty rank vector");
    const std::uint32_t keep = std::min(k, n);
    RrfVector out;
    out.dim = n;
    out.k = k;
    out.entries.resize(keep);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t r = ranks.ranks[i];
        if (r == 0 || r > n) throw InvalidInput("rrf_encode: ranks are not a permutation");
        if (r <= keep) out.entries[r - 1] = i;
    }
    return out;
}

// The 1-hot projection of an RRF vector: its rank-1 index.
inline OneHotLabel onehot_from_rrf(const RrfVector& v) {
    if (v.entries.empty()) throw InvalidInput("onehot_from_rrf: empty entry list");
    return OneHotLabel{v.entries.front()};
}

// Regularized random query: k maximum operations on an N-dimensional noise
// vector. The noise is continuous uniform, so the ordered top-k tuple is
// uniform over all arrangements of k distinct indices.
inline RrfVector sample_random_rrf(std::uint32_t n_dim, std::uint32_t k, Rng& rng) {
    if (n_dim == 0) throw InvalidInput("sample_random_rrf: dimension must be positive");
    if (k == 0 || k > n_dim) throw InvalidInput("sample_random_rrf: need 1 <= k <= N");
    ScoreVector noise(n_dim);
    for (double& v : noise) v = rng.next_double();
    return rrf_encode(rank_of(noise), k);
}

// Dense expansion: 1/p at the entry ranked p, zero elsewhere.
inline ScoreVector rrf_to_dense(const RrfVector& v) {
    ScoreVector dense(v.dim, 0.0);
    for (std::size_t p = 0; p < v.entries.size(); ++p) {
        const std::uint32_t idx = v.entries[p];
        if (idx >= v.dim) throw InvalidInput("rrf_to_dense: entry index out of range");
        dense[idx] = RrfVector::value_at(p);
    }
    return dense;
}

}  // namespace dfrd
