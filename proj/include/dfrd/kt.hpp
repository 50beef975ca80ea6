#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dfrd/error.hpp"
#include "dfrd/mlp.hpp"
#include "dfrd/rrf.hpp"
#include "dfrd/samplers.hpp"

// Data-free knowledge transfer: a student reconstructs a pseudo training set
// by querying black-box teachers, then trains on the answers. Teachers are
// reachable only through TeacherHandle::answer — no parameters, architecture
// or dataset access cross that boundary.

namespace dfrd {

// What a teacher reveals per query: the 1-hot class plus the k-hot rank
// approximation it was projected from.
struct TeacherAnswer {
    OneHotLabel y;
    std::optional<RrfVector> soft;
};

class TeacherHandle {
public:
    using AnswerFn = std::function<TeacherAnswer(const Query&)>;

    TeacherHandle() = default;
    TeacherHandle(std::string teacher_id, AnswerFn fn)
        : teacher_id_(std::move(teacher_id)),
          fn_(std::move(fn)),
          calls_(std::make_shared<std::atomic<std::uint64_t>>(0)) {}

    TeacherAnswer answer(const Query& q) const {
        if (!fn_) throw InvalidInput("teacher handle: not connected");
        ++*calls_;
        return fn_(q);
    }

    const std::string& teacher_id() const { return teacher_id_; }
    std::uint64_t answer_calls() const { return calls_ ? calls_->load() : 0; }

private:
    std::string teacher_id_;
    AnswerFn fn_;
    std::shared_ptr<std::atomic<std::uint64_t>> calls_;
};

// The black-box answering pipeline: dense input -> softmax -> rank ->
// k-hot RRF -> 1-hot. The soft output is the k-hot stage.
inline TeacherAnswer blackbox_answer(const MlpModel& model, const Query& query, std::uint32_t k) {
    const ScoreVector input = query_input(query);
    if (input.size() != model.config.in_dim) throw InvalidInput("blackbox_answer: dimension mismatch");
    const ScoreVector probs = forward_softmax(model, input);
    const RrfVector soft = rrf_encode(rank_of(probs), k);
    return TeacherAnswer{onehot_from_rrf(soft), soft};
}

inline TeacherAnswer blackbox_answer(const MlpModel& model, const RrfVector& query, std::uint32_t k) {
    return blackbox_answer(model, Query{query, {}, QueryTag::random}, k);
}

// Wrap a local model as an opaque teacher. The handle copies the model; the
// caller cannot reach it afterwards.
inline TeacherHandle make_local_teacher(MlpModel model, std::string teacher_id,
                                        std::uint32_t k = default_k) {
    auto owned = std::make_shared<const MlpModel>(std::move(model));
    return TeacherHandle(std::move(teacher_id), [owned, k](const Query& q) {
        return blackbox_answer(*owned, q, k);
    });
}

struct PseudoSample {
    RrfVector x;
    ScoreVector raw;  // nonempty only for naive bypass queries
    OneHotLabel y;
    std::optional<RrfVector> soft_y;
};

struct PseudoDataset {
    std::vector<PseudoSample> samples;
    std::string source_teacher;
    SamplerSpec sampler_spec;
};

// One pseudo sample per query, in query order; the teacher is consulted
// exactly once per query.
inline PseudoDataset reconstruct_dataset(const TeacherHandle& teacher, const QuerySet& queries) {
    if (queries.queries.empty()) throw InvalidInput("reconstruct_dataset: empty query set");
    PseudoDataset out;
    out.source_teacher = teacher.teacher_id();
    out.sampler_spec = queries.spec;
    out.samples.reserve(queries.queries.size());
    for (std::size_t i = 0; i < queries.queries.size(); ++i) {
        const Query& q = queries.queries[i];
        TeacherAnswer ans;
        try {
            ans = teacher.answer(q);
        } catch (const TransferError& e) {
            throw TransferError("query #" + std::to_string(i) + " to teacher '" +
                                teacher.teacher_id() + "' failed: " + e.what());
        }
        out.samples.push_back(PseudoSample{q.x, q.raw, ans.y, std::move(ans.soft)});
    }
    return out;
}

// Concatenate pseudo datasets in the order given.
inline std::vector<PseudoSample> pool_samples(std::span<const PseudoDataset> datasets) {
    std::vector<PseudoSample> pooled;
    std::size_t total = 0;
    for (const auto& d : datasets) total += d.samples.size();
    pooled.reserve(total);
    for (const auto& d : datasets) {
        pooled.insert(pooled.end(), d.samples.begin(), d.samples.end());
    }
    return pooled;
}

enum class DistillMode { hard, soft };

// Normalized reciprocal-rank values summing to 1: the soft target for one
// k-hot answer.
inline SparseTarget soft_target_from_rrf(const RrfVector& soft) {
    double sum = 0.0;
    for (std::size_t p = 0; p < soft.entries.size(); ++p) sum += RrfVector::value_at(p);
    SparseTarget t;
    t.terms.reserve(soft.entries.size());
    for (std::size_t p = 0; p < soft.entries.size(); ++p) {
        t.terms.emplace_back(soft.entries[p], RrfVector::value_at(p) / sum);
    }
    return t;
}

// Train the student on the pooled pseudo data. Hard mode fits the 1-hot
// answers with cross-entropy; soft mode fits the normalized reciprocal-rank
// distributions.
inline MlpModel distill(const MlpModel& student, std::span<const PseudoDataset> datasets,
                        const TrainConfig& tc, DistillMode mode = DistillMode::hard) {
    const std::vector<PseudoSample> pooled = pool_samples(datasets);
    if (pooled.empty()) throw InvalidInput("distill: no pseudo samples");
    TargetDataset data;
    data.inputs.reserve(pooled.size());
    data.targets.reserve(pooled.size());
    for (const auto& s : pooled) {
        data.inputs.push_back(s.raw.empty() ? rrf_to_dense(s.x) : s.raw);
        if (mode == DistillMode::hard) {
            data.targets.push_back(detail::hard_target(s.y));
        } else {
            if (!s.soft_y) throw InvalidInput("distill: soft mode requires soft_y on every sample");
            data.targets.push_back(soft_target_from_rrf(*s.soft_y));
        }
    }
    return train_targets(student, data, tc).model;
}

struct KtOptions {
    DistillMode mode = DistillMode::hard;
    bool pooled = true;       // one pass over all encounters; false = sequential per encounter
    std::size_t base_count = 1000;  // oracle queries per encounter (100 * m)
};

struct KtResult {
    MlpModel model;
    std::vector<RrfVector> pseudo_inputs;  // student's pseudo training inputs, canonical order
    std::uint64_t teacher_queries = 0;
};

// One knowledge-transfer session: per teacher, build a query set (oracle
// portion drawn from that teacher's pool), reconstruct a pseudo dataset,
// then run one pooled distillation pass. Per-teacher query streams are
// derived from the teacher id, and datasets are pooled in teacher-id order,
// so the result does not depend on the order teachers are listed.
inline KtResult kt_session(const MlpModel& student, std::span<const TeacherHandle> teachers,
                           std::span<const std::vector<RrfVector>> oracle_pools,
                           const SamplerSpec& spec, const TrainConfig& tc,
                           const KtOptions& options = {}) {
    if (teachers.empty()) throw InvalidInput("kt_session: need at least one teacher");
    if (oracle_pools.size() != teachers.size()) {
        throw InvalidInput("kt_session: one oracle pool per teacher required");
    }
    const std::uint32_t n_dim = student.config.in_dim;
    const std::uint32_t k = default_k > n_dim ? n_dim : default_k;

    std::vector<std::size_t> order(teachers.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return teachers[a].teacher_id() < teachers[b].teacher_id();
    });

    std::vector<PseudoDataset> datasets;
    datasets.reserve(teachers.size());
    KtResult result;
    for (std::size_t idx : order) {
        SamplerSpec teacher_spec = spec;
        teacher_spec.seed = mix_seed(spec.seed, fnv1a64(teachers[idx].teacher_id()));
        const QuerySet queries =
            build_query_set(oracle_pools[idx], teacher_spec, options.base_count, n_dim, k);
        PseudoDataset dataset = reconstruct_dataset(teachers[idx], queries);
        result.teacher_queries += queries.queries.size();
        for (const auto& s : dataset.samples) result.pseudo_inputs.push_back(s.x);
        datasets.push_back(std::move(dataset));
    }

    if (options.pooled) {
        result.model = distill(student, datasets, tc, options.mode);
    } else {
        MlpModel current = student;
        for (const auto& d : datasets) {
            current = distill(current, std::span<const PseudoDataset>(&d, 1), tc, options.mode);
        }
        result.model = std::move(current);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Pseudo dataset export: newline-delimited records, one per sample, of the
// form {"x":[indices best-first],"y":label}.
// ---------------------------------------------------------------------------

inline void save_pseudo_jsonl(const PseudoDataset& dataset, std::ostream& os) {
    std::string line;
    for (const auto& s : dataset.samples) {
        line.clear();
        line += "{\"x\":[";
        for (std::size_t i = 0; i < s.x.entries.size(); ++i) {
            if (i) line += ',';
            line += std::to_string(s.x.entries[i]);
        }
        line += "],\"y\":";
        line += std::to_string(s.y.class_id);
        line += "}\n";
        os.write(line.data(), static_cast<std::streamsize>(line.size()));
    }
    if (!os) throw IoError("pseudo dataset: write failed");
}

inline void save_pseudo_jsonl(const PseudoDataset& dataset, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("pseudo dataset: cannot open for write: " + path);
    save_pseudo_jsonl(dataset, os);
}

}  // namespace dfrd
