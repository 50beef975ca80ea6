#include <algorithm>
#include <set>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "dfrd/eval.hpp"
#include "dfrd/scenario.hpp"

using namespace dfrd;

namespace {

WorldConfig small_world(std::uint32_t classes, std::uint32_t seasons, std::uint64_t seed) {
    WorldConfig cfg;
    cfg.n_classes = classes;
    cfg.n_seasons = seasons;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("world generation is deterministic in the seed") {
    const WorldConfig cfg = small_world(20, 4, 5);
    const World a = gen_world(cfg);
    const World b = gen_world(cfg);
    CHECK(a.prototypes == b.prototypes);
    CHECK(a.drifts == b.drifts);

    WorldConfig other = cfg;
    other.seed = 6;
    const World c = gen_world(other);
    CHECK(a.prototypes != c.prototypes);
}

TEST_CASE("world config validation rejects degenerate setups") {
    WorldConfig cfg;
    cfg.n_classes = 1;
    CHECK_THROWS_AS(validate_world_config(cfg), InvalidInput);
    cfg = WorldConfig{};
    cfg.n_seasons = 0;
    CHECK_THROWS_AS(validate_world_config(cfg), InvalidInput);
    cfg = WorldConfig{};
    cfg.experience_prob = 1.5;
    CHECK_THROWS_AS(validate_world_config(cfg), InvalidInput);
    cfg = WorldConfig{};
    cfg.drift_scale = -0.1;
    CHECK_THROWS_AS(validate_world_config(cfg), InvalidInput);
    cfg = WorldConfig{};
    cfg.samples_per_class_per_season = 1;
    CHECK_THROWS_AS(validate_world_config(cfg), InvalidInput);
    CHECK_NOTHROW(validate_world_config(WorldConfig{}));
}

TEST_CASE("zero drift makes every season identical") {
    WorldConfig cfg = small_world(15, 5, 9);
    cfg.drift_scale = 0.0;
    const World world = gen_world(cfg);
    for (const auto& per_class : world.drifts) {
        for (const auto& season_drift : per_class) {
            for (double v : season_drift) CHECK(v == 0.0);
        }
    }
}

TEST_CASE("noiseless observations always rank the true class first") {
    WorldConfig cfg = small_world(100, 3, 11);
    cfg.drift_scale = 0.0;
    cfg.noise_scale = 0.0;
    const World world = gen_world(cfg);
    Rng rng(21);
    for (std::uint32_t c = 0; c < 100; c += 7) {
        for (std::uint32_t s = 0; s < 3; ++s) {
            const RrfVector obs = synth_observation(world, c, s, rng);
            CHECK(obs.entries.size() == 10);
            CHECK(obs.entries.front() == c);
        }
    }
}

TEST_CASE("observation fidelity decreases monotonically in noise") {
    WorldConfig cfg = small_world(50, 1, 13);
    const World world = gen_world(cfg);
    const double grid[] = {0.0, 1.0, 2.0, 4.0};
    std::vector<double> rates;
    for (double sigma : grid) {
        WorldConfig noisy = cfg;
        noisy.noise_scale = sigma;
        const World w{noisy, world.prototypes, world.drifts};
        Rng rng(31);
        int hits = 0;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) {
            const std::uint32_t c = static_cast<std::uint32_t>(rng.next_below(50));
            if (synth_observation(w, c, 0, rng).entries.front() == c) ++hits;
        }
        rates.push_back(static_cast<double>(hits) / draws);
    }
    for (std::size_t i = 1; i < rates.size(); ++i) CHECK(rates[i] < rates[i - 1]);
    CHECK(rates.front() > 0.9);
}

TEST_CASE("strong signal worlds are learnable to 99%") {
    WorldConfig cfg = small_world(20, 1, 17);
    cfg.signal_strength = 10.0;
    cfg.noise_scale = 0.3;
    cfg.drift_scale = 0.1;
    cfg.samples_per_class_per_season = 40;
    const World world = gen_world(cfg);
    const SeasonDataset season = make_season_dataset(world, 0);
    const MlpModel model =
        train(init_mlp(MlpConfig{20, {32}, 20, 3}), season.train, TrainConfig{120, 32, 0.3, 1}).model;
    CHECK(top1_accuracy(model, season.test) >= 0.99);
}

TEST_CASE("season datasets split 75/25 with every class in both halves") {
    const WorldConfig cfg = small_world(100, 2, 19);
    const World world = gen_world(cfg);
    const SeasonDataset season = make_season_dataset(world, 1);
    CHECK(season.train.samples.size() == 1500);
    CHECK(season.test.samples.size() == 500);
    REQUIRE(season.train_rrf.size() == 1500);

    std::vector<int> train_per_class(100, 0), test_per_class(100, 0);
    for (const auto& s : season.train.samples) ++train_per_class[s.label.class_id];
    for (const auto& s : season.test.samples) ++test_per_class[s.label.class_id];
    for (int c = 0; c < 100; ++c) {
        CHECK(train_per_class[c] == 15);
        CHECK(test_per_class[c] == 5);
    }

    for (std::size_t i = 0; i < season.train_rrf.size(); ++i) {
        CHECK(rrf_to_dense(season.train_rrf[i]) == season.train.samples[i].input);
    }

    // Disjointness: no test observation reuses a train observation's support.
    std::set<std::vector<std::uint32_t>> train_support;
    for (const auto& v : season.train_rrf) train_support.insert(v.entries);
    std::size_t collisions = 0;
    for (const auto& s : season.test.samples) {
        const RrfVector enc = rrf_encode(rank_of(s.input), 10);
        if (train_support.count(enc.entries)) ++collisions;
    }
    CHECK(collisions == 0);

    const SeasonDataset again = make_season_dataset(world, 1);
    CHECK(again.train.samples.size() == season.train.samples.size());
    CHECK(again.train.samples[7].input == season.train.samples[7].input);
}

TEST_CASE("experienced-class draws follow the Bernoulli design") {
    Rng rng(23);
    const auto all = assign_experienced_classes(30, 1.0, rng);
    CHECK(all.size() == 30);

    CHECK_THROWS_AS(assign_experienced_classes(30, 0.0, rng), InvalidInput);

    double total = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        total += static_cast<double>(assign_experienced_classes(100, 0.1, rng).size());
    }
    const double mean = total / draws;
    CHECK(mean == Catch::Approx(10.0).margin(0.5));

    // The redraw rule guarantees a nonempty set even at tiny p.
    for (int i = 0; i < 200; ++i) {
        CHECK_FALSE(assign_experienced_classes(3, 0.01, rng).empty());
    }
}

TEST_CASE("generation one consults exactly one teacher") {
    const WorldConfig cfg = small_world(10, 2, 7);
    const World world = gen_world(cfg);
    SamplerSpec spec;
    spec.kind = SamplerKind::oracle;
    spec.seed = 7;
    ScenarioOptions options;
    options.hidden_dims = {16};
    options.base_count = 200;
    options.student_train = TrainConfig{5, 16, 0.2, 0};
    options.teacher_train = TrainConfig{30, 16, 0.2, 0};
    std::vector<bool> cumulative(10, false);
    const auto [carry, report] = run_generation(world, 1, nullptr, spec, options, cumulative);
    CHECK(report.generation == 1);
    CHECK(report.teachers.size() == 1);
    CHECK(report.teachers[0].substr(0, 2) == "a:");
    CHECK(report.cumulative_experienced == report.experienced_this_gen.size());
    CHECK_FALSE(carry.pseudo_inputs.empty());

    const auto [carry2, report2] = run_generation(world, 2, &carry, spec, options, cumulative);
    CHECK(report2.teachers.size() == 2);
    CHECK(report2.cumulative_experienced >= report.cumulative_experienced);
}

TEST_CASE("experiments are deterministic and track cumulative coverage") {
    WorldConfig cfg = small_world(10, 3, 29);
    cfg.experience_prob = 0.3;
    SamplerSpec spec;
    spec.kind = SamplerKind::mixed;
    spec.r = 10;
    spec.random_kind = RandomKind::regularized;
    spec.seed = 29;
    ScenarioOptions options;
    options.hidden_dims = {16};
    options.base_count = 100;
    options.student_train = TrainConfig{5, 16, 0.2, 0};
    options.teacher_train = TrainConfig{30, 16, 0.2, 0};

    const ExperimentResult a = run_experiment(cfg, spec, options);
    const ExperimentResult b = run_experiment(cfg, spec, options);
    REQUIRE(a.reports.size() == 3);
    REQUIRE(b.reports.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.reports[i].top1 == b.reports[i].top1);
        CHECK(a.reports[i].teacher_a_checksum == b.reports[i].teacher_a_checksum);
        CHECK(a.reports[i].experienced_this_gen == b.reports[i].experienced_this_gen);
        if (i > 0) {
            CHECK(a.reports[i].cumulative_experienced >= a.reports[i - 1].cumulative_experienced);
        }
        CHECK(a.reports[i].cumulative_experienced <= 10);
        CHECK(a.reports[i].world_seed == 29);
    }
    CHECK(checksum_mlp(a.final_student.model) == checksum_mlp(b.final_student.model));

    WorldConfig single = cfg;
    single.n_seasons = 1;
    CHECK(run_experiment(single, spec, options).reports.size() == 1);
}

TEST_CASE("never-experienced accuracy is reported only while classes remain") {
    WorldConfig cfg = small_world(10, 2, 41);
    cfg.experience_prob = 1.0;  // every class experienced from generation one
    SamplerSpec spec;
    spec.kind = SamplerKind::oracle;
    spec.seed = 41;
    ScenarioOptions options;
    options.hidden_dims = {16};
    options.base_count = 100;
    options.student_train = TrainConfig{5, 16, 0.2, 0};
    options.teacher_train = TrainConfig{20, 16, 0.2, 0};
    const ExperimentResult result = run_experiment(cfg, spec, options);
    CHECK_FALSE(result.reports[0].top1_never_experienced.has_value());

    cfg.experience_prob = 0.2;
    const ExperimentResult sparse = run_experiment(cfg, spec, options);
    if (sparse.reports[0].cumulative_experienced < 10) {
        CHECK(sparse.reports[0].top1_never_experienced.has_value());
    }
}
