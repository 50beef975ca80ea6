#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dfrd/error.hpp"
#include "dfrd/rng.hpp"
#include "dfrd/rrf.hpp"

// Query generators for dataset reconstruction. The oracle sampler draws from
// a teacher's actual training inputs (the best case); the naive random
// sampler draws unstructured dense noise (the worst case); the regularized
// random sampler draws random k-hot RRF vectors. Mixtures combine 100*m
// oracle queries with r*m random queries.

namespace dfrd {

enum class SamplerKind { oracle, naive_random, regularized_random, mixed };
enum class RandomKind { naive, regularized };
enum class QueryTag { oracle, random };

struct SamplerSpec {
    SamplerKind kind = SamplerKind::oracle;
    std::uint32_t r = 0;                         // mixture only: 100:r
    RandomKind random_kind = RandomKind::regularized;  // mixture only
    std::uint64_t seed = 0;
    // Naive queries bypass RRF encoding and feed raw dense noise to the
    // model, preserving the naive-vs-regularized contrast. Off re-encodes
    // the noise into the common k-hot format instead.
    bool naive_bypass_rrf = true;
};

inline std::string sampler_kind_name(SamplerKind k) {
    switch (k) {
        case SamplerKind::oracle: return "oracle";
        case SamplerKind::naive_random: return "naive_random";
        case SamplerKind::regularized_random: return "regularized_random";
        case SamplerKind::mixed: return "mixed";
    }
    return "?";
}

// One query. `x` is the canonical k-hot form; `raw` is nonempty only for
// naive bypass queries, where it holds the dense noise actually fed to the
// teacher.
struct Query {
    RrfVector x;
    ScoreVector raw;
    QueryTag tag = QueryTag::random;
};

struct QuerySet {
    std::uint32_t n_dim = 0;
    std::uint32_t k = 0;
    SamplerSpec spec;
    std::vector<Query> queries;
};

// The dense vector a teacher model actually consumes for a query.
inline ScoreVector query_input(const Query& q) {
    return q.raw.empty() ? rrf_to_dense(q.x) : q.raw;
}

// Uniform draws with replacement from a pool of real inputs.
inline QuerySet oracle_sample(std::span<const RrfVector> pool, std::size_t count, Rng& rng) {
    if (pool.empty()) throw InvalidInput("oracle_sample: empty pool");
    QuerySet out;
    out.n_dim = pool.front().dim;
    out.k = pool.front().k;
    out.spec.kind = SamplerKind::oracle;
    out.queries.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& picked = pool[rng.next_below(pool.size())];
        out.queries.push_back(Query{picked, {}, QueryTag::oracle});
    }
    return out;
}

// Dense i.i.d. uniform [0,1) noise per query. With bypass the noise itself
// is the model input; without it the noise is ranked and re-encoded so the
// query is an ordinary k-hot RRF.
inline QuerySet naive_random_sample(std::uint32_t n_dim, std::size_t count, Rng& rng,
                                    std::uint32_t k = default_k, bool bypass_rrf = true) {
    if (n_dim == 0) throw InvalidInput("naive_random_sample: dimension must be positive");
    QuerySet out;
    out.n_dim = n_dim;
    out.k = std::min(k, n_dim);
    out.spec.kind = SamplerKind::naive_random;
    out.queries.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ScoreVector noise(n_dim);
        for (double& v : noise) v = rng.next_double();
        Query q;
        q.x = rrf_encode(rank_of(noise), out.k);
        if (bypass_rrf) q.raw = std::move(noise);
        q.tag = QueryTag::random;
        out.queries.push_back(std::move(q));
    }
    return out;
}

inline QuerySet regularized_random_sample(std::uint32_t n_dim, std::size_t count, Rng& rng,
                                          std::uint32_t k = default_k) {
    QuerySet out;
    out.n_dim = n_dim;
    out.k = std::min(k, n_dim);
    out.spec.kind = SamplerKind::regularized_random;
    out.queries.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.queries.push_back(Query{sample_random_rrf(n_dim, out.k, rng), {}, QueryTag::random});
    }
    return out;
}

// Build the query set for one teacher encounter. base_count must be 100*m;
// mixtures emit exactly 100*m oracle plus r*m random queries and shuffle
// them deterministically. Pure kinds emit base_count queries.
inline QuerySet build_query_set(std::span<const RrfVector> oracle_pool, const SamplerSpec& spec,
                                std::size_t base_count, std::uint32_t n_dim,
                                std::uint32_t k = default_k) {
    if (base_count == 0 || base_count % 100 != 0) {
        throw InvalidInput("build_query_set: base_count must be a positive multiple of 100");
    }
    const std::size_t m = base_count / 100;
    Rng rng(spec.seed);
    Rng oracle_rng = rng.child("oracle");
    Rng random_rng = rng.child("random");
    Rng shuffle_rng = rng.child("shuffle");

    QuerySet out;
    out.n_dim = n_dim;
    out.k = std::min(k, n_dim);
    out.spec = spec;

    const bool needs_oracle = spec.kind == SamplerKind::oracle || spec.kind == SamplerKind::mixed;
    if (needs_oracle) {
        if (oracle_pool.empty()) throw InvalidInput("build_query_set: oracle draws require a nonempty pool");
        if (oracle_pool.front().dim != n_dim) {
            throw InvalidInput("build_query_set: oracle pool dimension mismatch");
        }
    }

    auto append = [&out](QuerySet&& part) {
        for (auto& q : part.queries) out.queries.push_back(std::move(q));
    };

    switch (spec.kind) {
        case SamplerKind::oracle:
            append(oracle_sample(oracle_pool, base_count, oracle_rng));
            break;
        case SamplerKind::naive_random:
            append(naive_random_sample(n_dim, base_count, random_rng, k, spec.naive_bypass_rrf));
            break;
        case SamplerKind::regularized_random:
            append(regularized_random_sample(n_dim, base_count, random_rng, k));
            break;
        case SamplerKind::mixed: {
            append(oracle_sample(oracle_pool, 100 * m, oracle_rng));
            const std::size_t random_count = static_cast<std::size_t>(spec.r) * m;
            if (spec.random_kind == RandomKind::naive) {
                append(naive_random_sample(n_dim, random_count, random_rng, k, spec.naive_bypass_rrf));
            } else {
                append(regularized_random_sample(n_dim, random_count, random_rng, k));
            }
            shuffle_rng.shuffle(out.queries);
            break;
        }
    }
    return out;
}

}  // namespace dfrd
