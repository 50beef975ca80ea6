#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dfrd/error.hpp"
#include "dfrd/eval.hpp"
#include "dfrd/kt.hpp"
#include "dfrd/mlp.hpp"
#include "dfrd/rng.hpp"
#include "dfrd/rrf.hpp"
#include "dfrd/samplers.hpp"

// The cross-season workload and the recursive generation loop. A synthetic
// world stands in for the place-recognition pipeline: each class is a noisy
// prototype score map, each season adds a per-class drift, and observations
// are RRF encodings of prototype + drift + noise. Per generation a fresh
// student distills from (a) a supervised teacher that experienced a random
// subset of classes this season and (b) the previous generation's student,
// then becomes the next generation's teacher B.

namespace dfrd {

struct WorldConfig {
    std::uint32_t n_classes = 100;
    std::uint32_t n_seasons = 10;
    double signal_strength = 3.0;  // prototype peak height over the noise floor
    double drift_scale = 0.5;      // per-season class drift sigma
    double noise_scale = 1.0;      // per-observation noise sigma
    std::uint32_t samples_per_class_per_season = 20;  // split 75/25 train/test
    double experience_prob = 0.1;  // Bernoulli chance a teacher knows a class
    std::uint64_t seed = 0;
};

inline void validate_world_config(const WorldConfig& cfg) {
    if (cfg.n_classes < 2) throw InvalidInput("world config: need at least 2 classes");
    if (cfg.n_seasons < 1) throw InvalidInput("world config: need at least 1 season");
    // p = 0 leaves every experience draw empty and can never terminate.
    if (!(cfg.experience_prob > 0.0 && cfg.experience_prob <= 1.0)) {
        throw InvalidInput("world config: experience_prob must be in (0, 1]");
    }
    if (!(cfg.drift_scale >= 0.0) || !(cfg.noise_scale >= 0.0) || !(cfg.signal_strength >= 0.0)) {
        throw InvalidInput("world config: scales must be >= 0");
    }
    if (cfg.samples_per_class_per_season < 2) {
        throw InvalidInput("world config: need >= 2 samples per class per season");
    }
}

struct World {
    WorldConfig config;
    std::vector<ScoreVector> prototypes;           // [class][dim]
    std::vector<std::vector<ScoreVector>> drifts;  // [class][season][dim]
};

// Class c's prototype is a one-hot peak of height alpha plus small normal
// jitter; drifts are i.i.d. normal per (class, season, dim). Deterministic
// in cfg.seed.
inline World gen_world(const WorldConfig& cfg) {
    validate_world_config(cfg);
    World world;
    world.config = cfg;
    const std::uint32_t C = cfg.n_classes;
    Rng root(cfg.seed);
    Rng proto_rng = root.child("prototype");
    Rng drift_rng = root.child("drift");

    world.prototypes.resize(C);
    for (std::uint32_t c = 0; c < C; ++c) {
        ScoreVector& proto = world.prototypes[c];
        proto.resize(C);
        for (std::uint32_t j = 0; j < C; ++j) {
            proto[j] = (j == c ? cfg.signal_strength : 0.0) + 0.1 * proto_rng.next_normal();
        }
    }
    world.drifts.resize(C);
    for (std::uint32_t c = 0; c < C; ++c) {
        world.drifts[c].resize(cfg.n_seasons);
        for (std::uint32_t s = 0; s < cfg.n_seasons; ++s) {
            ScoreVector& d = world.drifts[c][s];
            d.resize(C);
            for (std::uint32_t j = 0; j < C; ++j) d[j] = cfg.drift_scale * drift_rng.next_normal();
        }
    }
    return world;
}

// One observation of class c in season s: noisy scores ranked and truncated
// to the k-hot RRF form.
inline RrfVector synth_observation(const World& world, std::uint32_t c, std::uint32_t s, Rng& rng) {
    const WorldConfig& cfg = world.config;
    if (c >= cfg.n_classes) throw InvalidInput("synth_observation: class out of range");
    if (s >= cfg.n_seasons) throw InvalidInput("synth_observation: season out of range");
    ScoreVector scores(cfg.n_classes);
    const ScoreVector& proto = world.prototypes[c];
    const ScoreVector& drift = world.drifts[c][s];
    for (std::uint32_t j = 0; j < cfg.n_classes; ++j) {
        scores[j] = proto[j] + drift[j] + cfg.noise_scale * rng.next_normal();
    }
    return rrf_encode(rank_of(scores), std::min(default_k, cfg.n_classes));
}

struct SeasonDataset {
    std::uint32_t season = 0;
    LabeledDataset train;
    LabeledDataset test;
    std::vector<RrfVector> train_rrf;  // sparse form of train inputs, same order
};

// samples_per_class draws per class; the first 3/4 by draw index are train,
// the rest test, so the split is disjoint and every class appears in both.
inline SeasonDataset make_season_dataset(const World& world, std::uint32_t s) {
    const WorldConfig& cfg = world.config;
    if (s >= cfg.n_seasons) throw InvalidInput("make_season_dataset: season out of range");
    const std::uint32_t spc = cfg.samples_per_class_per_season;
    const std::uint32_t train_n = (3 * spc) / 4;
    Rng rng = Rng(cfg.seed).child("season").child(s);

    SeasonDataset out;
    out.season = s;
    out.train.samples.reserve(static_cast<std::size_t>(cfg.n_classes) * train_n);
    out.test.samples.reserve(static_cast<std::size_t>(cfg.n_classes) * (spc - train_n));
    for (std::uint32_t c = 0; c < cfg.n_classes; ++c) {
        for (std::uint32_t d = 0; d < spc; ++d) {
            RrfVector obs = synth_observation(world, c, s, rng);
            LabeledSample sample{rrf_to_dense(obs), OneHotLabel{c}};
            if (d < train_n) {
                out.train_rrf.push_back(std::move(obs));
                out.train.samples.push_back(std::move(sample));
            } else {
                out.test.samples.push_back(std::move(sample));
            }
        }
    }
    return out;
}

// Independent Bernoulli(p) per class, re-drawn until nonempty so every
// teacher knows at least one class. p = 0 can never terminate and is
// rejected.
inline std::vector<std::uint32_t> assign_experienced_classes(std::uint32_t n_classes, double p,
                                                             Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("assign_experienced_classes: p must be in [0, 1]");
    if (p == 0.0) {
        throw InvalidInput("assign_experienced_classes: p = 0 leaves every draw empty");
    }
    std::vector<std::uint32_t> classes;
    do {
        classes.clear();
        for (std::uint32_t c = 0; c < n_classes; ++c) {
            if (rng.next_double() < p) classes.push_back(c);
        }
    } while (classes.empty());
    return classes;
}

struct GenerationReport {
    std::uint32_t generation = 0;  // 1-based season index
    double top1 = 0.0;
    std::vector<std::uint32_t> experienced_this_gen;  // teacher A's class set
    std::uint32_t cumulative_experienced = 0;
    std::optional<double> top1_never_experienced;  // empty once every class is covered
    double teacher_a_exp_top1 = 0.0;  // teacher A on its own classes, season test split
    std::uint64_t teacher_a_checksum = 0;
    std::vector<std::string> teachers;  // ids consulted, pooled order
    SamplerSpec sampler_spec;
    std::uint64_t world_seed = 0;
};

struct ScenarioOptions {
    std::vector<std::uint32_t> hidden_dims{256};
    TrainConfig student_train{30, 32, 0.3, 0};         // distillation pass
    TrainConfig teacher_train{120, 32, 0.1, 0};        // supervised teacher pass
    std::size_t base_count = 1000;                     // oracle queries per encounter
    DistillMode mode = DistillMode::hard;
};

// A trained student plus the pseudo inputs it was trained on; the pair is
// what generation i hands to generation i+1 (the inputs become teacher B's
// oracle pool).
struct StudentCarry {
    MlpModel model;
    std::vector<RrfVector> pseudo_inputs;
};

namespace detail {

inline double top1_on_subset(const MlpModel& model, const LabeledDataset& data,
                             const std::vector<bool>& keep_class) {
    MlpScratch scratch;
    scratch.resize(model);
    std::size_t n = 0, hits = 0;
    for (const auto& s : data.samples) {
        if (!keep_class[s.label.class_id]) continue;
        ++n;
        if (argmax_label(model, s.input, scratch) == s.label.class_id) ++hits;
    }
    if (n == 0) throw InvalidInput("top1_on_subset: no samples in subset");
    return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace detail

// One season of the loop. `cumulative` tracks the union of experienced
// classes across generations and is updated in place; pass prev = nullptr
// for the first generation (teacher B does not exist yet).
inline std::pair<StudentCarry, GenerationReport> run_generation(
    const World& world, std::uint32_t i, const StudentCarry* prev, const SamplerSpec& spec,
    const ScenarioOptions& options, std::vector<bool>& cumulative) {
    const WorldConfig& cfg = world.config;
    if (i < 1 || i > cfg.n_seasons) throw InvalidInput("run_generation: season index out of range");
    if (cumulative.size() != cfg.n_classes) cumulative.assign(cfg.n_classes, false);
    const std::uint32_t C = cfg.n_classes;
    const std::string gen_tag = std::to_string(i);
    Rng root(cfg.seed);

    const SeasonDataset season = make_season_dataset(world, i - 1);

    // Teacher A: supervised on the experienced slice of this season's train
    // split.
    Rng exp_rng = root.child("experience").child(i);
    const std::vector<std::uint32_t> experienced =
        assign_experienced_classes(C, cfg.experience_prob, exp_rng);
    std::vector<bool> is_exp(C, false);
    for (auto c : experienced) is_exp[c] = true;

    LabeledDataset a_train;
    std::vector<RrfVector> a_pool;
    for (std::size_t idx = 0; idx < season.train.samples.size(); ++idx) {
        const auto& sample = season.train.samples[idx];
        if (!is_exp[sample.label.class_id]) continue;
        a_train.samples.push_back(sample);
        a_pool.push_back(season.train_rrf[idx]);
    }

    MlpConfig teacher_cfg{C, options.hidden_dims, C, mix_seed(cfg.seed, fnv1a64("teacherA:init:" + gen_tag))};
    TrainConfig teacher_tc = options.teacher_train;
    teacher_tc.shuffle_seed = mix_seed(cfg.seed, fnv1a64("teacherA:shuffle:" + gen_tag));
    MlpModel a_model = train(init_mlp(teacher_cfg), a_train, teacher_tc).model;

    const std::uint32_t k = std::min(default_k, C);
    std::vector<TeacherHandle> teachers;
    std::vector<std::vector<RrfVector>> pools;
    teachers.push_back(make_local_teacher(a_model, "a:season" + gen_tag, k));
    pools.push_back(std::move(a_pool));
    if (i >= 2 && prev != nullptr) {
        teachers.push_back(make_local_teacher(prev->model, "b:student" + std::to_string(i - 1), k));
        pools.push_back(prev->pseudo_inputs);
    }

    // Fresh student distills from the open teacher set.
    MlpConfig student_cfg{C, options.hidden_dims, C, mix_seed(cfg.seed, fnv1a64("student:init:" + gen_tag))};
    TrainConfig student_tc = options.student_train;
    student_tc.shuffle_seed = mix_seed(cfg.seed, fnv1a64("student:shuffle:" + gen_tag));
    SamplerSpec gen_spec = spec;
    gen_spec.seed = mix_seed(spec.seed, fnv1a64("gen:" + gen_tag));
    KtOptions kto;
    kto.mode = options.mode;
    kto.base_count = options.base_count;
    KtResult kt = kt_session(init_mlp(student_cfg), teachers,
                             std::span<const std::vector<RrfVector>>(pools), gen_spec, student_tc, kto);

    for (auto c : experienced) cumulative[c] = true;

    GenerationReport report;
    report.generation = i;
    report.top1 = top1_accuracy(kt.model, season.test);
    report.experienced_this_gen = experienced;
    report.cumulative_experienced =
        static_cast<std::uint32_t>(std::count(cumulative.begin(), cumulative.end(), true));
    std::vector<bool> never(C);
    bool any_never = false;
    for (std::uint32_t c = 0; c < C; ++c) {
        never[c] = !cumulative[c];
        any_never = any_never || never[c];
    }
    if (any_never) {
        report.top1_never_experienced = detail::top1_on_subset(kt.model, season.test, never);
    }
    report.teacher_a_exp_top1 = detail::top1_on_subset(a_model, season.test, is_exp);
    report.teacher_a_checksum = checksum_mlp(a_model);
    for (const auto& t : teachers) report.teachers.push_back(t.teacher_id());
    report.sampler_spec = gen_spec;
    report.world_seed = cfg.seed;

    StudentCarry carry;
    carry.model = std::move(kt.model);
    carry.pseudo_inputs = std::move(kt.pseudo_inputs);
    return {std::move(carry), std::move(report)};
}

struct ExperimentResult {
    std::vector<GenerationReport> reports;
    StudentCarry final_student;
};

// The full recursive loop: generations 1..S, each student carried forward as
// the next teacher B.
inline ExperimentResult run_experiment(const WorldConfig& cfg, const SamplerSpec& spec,
                                       const ScenarioOptions& options = {}) {
    const World world = gen_world(cfg);
    ExperimentResult result;
    result.reports.reserve(cfg.n_seasons);
    std::vector<bool> cumulative(cfg.n_classes, false);
    StudentCarry carry;
    for (std::uint32_t i = 1; i <= cfg.n_seasons; ++i) {
        auto [next, report] =
            run_generation(world, i, i >= 2 ? &carry : nullptr, spec, options, cumulative);
        carry = std::move(next);
        result.reports.push_back(std::move(report));
    }
    result.final_student = std::move(carry);
    return result;
}

}  // namespace dfrd
