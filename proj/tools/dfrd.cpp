// Command-line front end: experiments, sweeps, gradient checks, and the
// teacher server/client. Exit codes: 0 success, 1 usage error, 2 runtime
// error. Data goes to stdout (or --out); progress goes to stderr.

#include <cstdint>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dfrd/dfrd.hpp"

namespace {

using namespace dfrd;

struct CommonFlags {
    std::string config_path;
    std::uint64_t seed = 0;
    std::uint32_t classes = 0;
    std::uint32_t seasons = 0;
    std::vector<std::uint32_t> hidden;
    std::uint32_t epochs = 0;
    std::uint32_t teacher_epochs = 0;
    std::size_t base_count = 0;
    double experience_prob = 0.0;
};

// Shared experiment knobs; every value only overrides the config file when
// the flag was actually given.
void add_common_flags(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config_path, "experiment config JSON");
    sub->add_option("--seed", f.seed, "world and sampler seed");
    sub->add_option("--classes", f.classes, "number of place classes")->check(CLI::PositiveNumber);
    sub->add_option("--seasons", f.seasons, "number of seasons / generations")->check(CLI::PositiveNumber);
    sub->add_option("--hidden", f.hidden, "hidden layer widths")->delimiter(',');
    sub->add_option("--epochs", f.epochs, "student training epochs")->check(CLI::PositiveNumber);
    sub->add_option("--teacher-epochs", f.teacher_epochs, "supervised teacher epochs")
        ->check(CLI::PositiveNumber);
    sub->add_option("--base-count", f.base_count, "oracle queries per teacher encounter")
        ->check(CLI::PositiveNumber);
    sub->add_option("--p", f.experience_prob, "per-class experience probability")
        ->check(CLI::Range(0.0, 1.0));
}

ExperimentConfig resolve_config(const CLI::App* sub, const CommonFlags& f) {
    ExperimentConfig cfg = f.config_path.empty() ? ExperimentConfig{} : load_config(f.config_path);
    if (sub->count("--seed")) {
        cfg.world.seed = f.seed;
        cfg.sampler.seed = f.seed;
    }
    if (sub->count("--classes")) cfg.world.n_classes = f.classes;
    if (sub->count("--seasons")) cfg.world.n_seasons = f.seasons;
    if (sub->count("--hidden")) cfg.scenario.hidden_dims = f.hidden;
    if (sub->count("--epochs")) cfg.scenario.student_train.epochs = f.epochs;
    if (sub->count("--teacher-epochs")) cfg.scenario.teacher_train.epochs = f.teacher_epochs;
    if (sub->count("--base-count")) cfg.scenario.base_count = f.base_count;
    if (sub->count("--p")) cfg.world.experience_prob = f.experience_prob;
    validate_world_config(cfg.world);
    return cfg;
}

void emit_csv(const std::vector<GenerationReport>& reports, const std::string& out_path) {
    if (out_path.empty() || out_path == "-") {
        write_report_csv(reports, std::cout);
    } else {
        write_report_csv(reports, out_path);
        std::cerr << "wrote " << out_path << "\n";
    }
}

int run_main(const CLI::App* sub, const CommonFlags& common, const std::string& sampler_name,
             std::uint32_t r, const std::string& random_name, std::uint32_t replicas,
             const std::string& out_path, const std::string& plot_path) {
    ExperimentConfig cfg = resolve_config(sub, common);
    if (sub->count("--sampler")) cfg.sampler.kind = sampler_kind_from_name(sampler_name);
    if (sub->count("--r")) cfg.sampler.r = r;
    if (sub->count("--random")) cfg.sampler.random_kind = random_kind_from_name(random_name);

    std::vector<GenerationReport> all;
    for (std::uint32_t rep = 0; rep < replicas; ++rep) {
        WorldConfig world = cfg.world;
        SamplerSpec spec = cfg.sampler;
        world.seed += rep;
        spec.seed += rep;
        ExperimentResult result = run_experiment(world, spec, cfg.scenario);
        for (auto& report : result.reports) all.push_back(std::move(report));
    }
    emit_csv(all, out_path);
    if (!plot_path.empty()) write_svg_plot(all, plot_path);
    return 0;
}

int sweep_main(const CLI::App* sub, const CommonFlags& common, std::vector<std::uint32_t> r_list,
               const std::string& random_name, unsigned jobs, const std::string& out_path,
               const std::string& plot_path) {
    ExperimentConfig cfg = resolve_config(sub, common);
    if (sub->count("--random")) cfg.sampler.random_kind = random_kind_from_name(random_name);
    if (r_list.empty()) r_list = default_r_list();

    const SweepResult sweep = sweep_r(cfg.world, cfg.sampler, r_list, cfg.scenario, jobs);
    if (out_path.empty() || out_path == "-") {
        write_sweep_csv(sweep, std::cout);
    } else {
        write_sweep_csv(sweep, out_path);
        std::cerr << "wrote " << out_path << "\n";
    }
    if (!plot_path.empty()) write_svg_plot(sweep, plot_path);
    return 0;
}

int serve_main(const std::string& model_path, const std::string& listen, std::uint64_t max_sessions,
               std::uint32_t k) {
    const MlpModel model = load_mlp(model_path);
    const int listen_fd = tcp_listen(listen);
    std::cout << "listening on " << parse_endpoint(listen).host << ":" << bound_port(listen_fd)
              << " (model " << model.config.in_dim << " -> " << model.config.out_dim << ")\n"
              << std::flush;
    std::uint64_t sessions = 0;
    while (max_sessions == 0 || sessions < max_sessions) {
        auto channel = tcp_accept(listen_fd);
        const ServeSummary summary = serve_teacher(model, *channel, k);
        ++sessions;
        std::cout << "session " << sessions << ": answered " << summary.queries_answered
                  << " queries"
                  << (summary.error_code.empty() ? "" : (" (error: " + summary.error_code + ")"))
                  << "\n"
                  << std::flush;
    }
    ::close(listen_fd);
    return 0;
}

int connect_main(const std::string& addr, std::size_t count, const std::string& sampler_name,
                 std::uint64_t seed, const std::vector<std::uint32_t>& hidden, std::uint32_t epochs,
                 std::size_t probes, const std::string& out_model, const std::string& dump_pseudo) {
    auto session = std::make_shared<RemoteTeacher>(tcp_connect(addr));
    const std::uint32_t n_dim = session->n_dim();
    const std::uint32_t n_classes = session->n_classes();
    const std::uint32_t k = session->k();
    std::cerr << "teacher at " << addr << ": n_dim " << n_dim << ", classes " << n_classes
              << ", k " << k << "\n";
    TeacherHandle teacher = make_remote_teacher(session, "remote:" + addr);

    SamplerSpec spec;
    spec.kind = sampler_kind_from_name(sampler_name);
    if (spec.kind == SamplerKind::oracle || spec.kind == SamplerKind::mixed) {
        throw InvalidInput("connect: no oracle pool exists client-side; use naive or regularized");
    }
    spec.seed = seed;
    spec.naive_bypass_rrf = false;  // dense noise cannot cross the wire

    const QuerySet queries = build_query_set({}, spec, count, n_dim, std::min(k, n_dim));
    const PseudoDataset pseudo = reconstruct_dataset(teacher, queries);

    TrainConfig tc;
    tc.epochs = epochs;
    tc.shuffle_seed = mix_seed(seed, fnv1a64("connect:shuffle"));
    MlpConfig student_cfg{n_dim, hidden, n_classes, mix_seed(seed, fnv1a64("connect:init"))};
    const MlpModel student =
        distill(init_mlp(student_cfg), std::span<const PseudoDataset>(&pseudo, 1), tc);

    // Live agreement probe: fresh queries, student argmax vs teacher answer.
    Rng probe_rng = Rng(seed).child("connect:probe");
    MlpScratch scratch;
    scratch.resize(student);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < probes; ++i) {
        const RrfVector x = sample_random_rrf(n_dim, std::min(k, n_dim), probe_rng);
        const TeacherAnswer ans = teacher.answer(Query{x, {}, QueryTag::random});
        if (argmax_label(student, rrf_to_dense(x), scratch) == ans.y.class_id) ++agree;
    }
    session->close();

    std::cout << "distilled from " << pseudo.samples.size() << " answers; agreement "
              << detail::format_top1(probes ? static_cast<double>(agree) / probes : 0.0) << " on "
              << probes << " probes\n";
    if (!out_model.empty()) {
        save_mlp(student, out_model);
        std::cerr << "wrote " << out_model << "\n";
    }
    if (!dump_pseudo.empty()) {
        save_pseudo_jsonl(pseudo, dump_pseudo);
        std::cerr << "wrote " << dump_pseudo << "\n";
    }
    return 0;
}

int gradcheck_main(std::uint64_t seed, std::uint32_t n_models) {
    Rng rng(seed);
    double worst = 0.0;
    std::size_t total_params = 0;
    for (std::uint32_t m = 0; m < n_models; ++m) {
        const std::uint32_t in_dim = 2 + static_cast<std::uint32_t>(rng.next_below(7));   // 2..8
        const std::uint32_t out_dim = 2 + static_cast<std::uint32_t>(rng.next_below(4));  // 2..5
        std::vector<std::uint32_t> hidden;
        const std::uint32_t n_hidden = static_cast<std::uint32_t>(rng.next_below(3));  // 0..2
        for (std::uint32_t h = 0; h < n_hidden; ++h) {
            hidden.push_back(2 + static_cast<std::uint32_t>(rng.next_below(7)));
        }
        Rng init_rng = rng.child(1000 + m);
        const MlpModel model = init_mlp(MlpConfig{in_dim, hidden, out_dim, 0}, init_rng);

        LabeledDataset batch;
        for (int i = 0; i < 8; ++i) {
            LabeledSample s;
            s.input.resize(in_dim);
            for (double& v : s.input) v = rng.next_normal();
            s.label.class_id = static_cast<std::uint32_t>(rng.next_below(out_dim));
            batch.samples.push_back(std::move(s));
        }
        const GradCheckReport report = gradient_check(model, batch);
        worst = std::max(worst, report.max_rel_err);
        total_params += report.params_checked;
    }
    std::cout << "gradcheck: " << n_models << " models, " << total_params
              << " parameters, max relative error " << worst << "\n";
    if (!(worst < 1e-4)) throw Error("gradient check failed: max relative error >= 1e-4");
    return 0;
}

int demo_main(std::uint64_t seed) {
    WorldConfig cfg;
    cfg.n_classes = 10;
    cfg.n_seasons = 10;
    cfg.samples_per_class_per_season = 20;
    cfg.experience_prob = 0.2;
    cfg.seed = seed;

    SamplerSpec spec;
    spec.kind = SamplerKind::mixed;
    spec.r = 10;
    spec.random_kind = RandomKind::regularized;
    spec.seed = seed;

    ScenarioOptions options;
    options.hidden_dims = {32};
    options.base_count = 500;
    options.student_train.epochs = 30;
    options.teacher_train.epochs = 80;

    const World world = gen_world(cfg);
    std::vector<bool> cumulative(cfg.n_classes, false);
    StudentCarry carry;
    for (std::uint32_t i = 1; i <= cfg.n_seasons; ++i) {
        auto [next, report] =
            run_generation(world, i, i >= 2 ? &carry : nullptr, spec, options, cumulative);
        carry = std::move(next);
        std::cout << "generation " << i << "  top1 " << detail::format_top1(report.top1)
                  << "  experienced " << report.cumulative_experienced << "/" << cfg.n_classes
                  << "\n"
                  << std::flush;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"data-free recursive distillation: experiments, sweeps and teacher serving"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run one recursive-distillation experiment");
    CommonFlags run_common;
    add_common_flags(run, run_common);
    std::string run_sampler = "oracle", run_random = "regularized", run_out, run_plot;
    std::uint32_t run_r = 10, run_replicas = 1;
    run->add_option("--sampler", run_sampler, "query sampler: oracle, naive, regularized, mixed");
    run->add_option("--r", run_r, "random queries per 100 oracle queries (mixed sampler)");
    run->add_option("--random", run_random, "random kind inside mixtures: naive or regularized");
    run->add_option("--replicas", run_replicas, "independent replicas (seed offset per replica)")
        ->check(CLI::PositiveNumber);
    run->add_option("--out", run_out, "CSV output path ('-' = stdout)");
    run->add_option("--plot", run_plot, "also write an SVG chart");

    auto* sweep = app.add_subcommand("sweep", "sweep the oracle:random mixing ratio");
    CommonFlags sweep_common;
    add_common_flags(sweep, sweep_common);
    std::vector<std::uint32_t> sweep_r_list;
    std::string sweep_random = "regularized", sweep_out, sweep_plot;
    unsigned sweep_jobs = 1;
    sweep->add_option("--r-list", sweep_r_list, "mixing ratios (default 10,20,...,10240)")
        ->delimiter(',');
    sweep->add_option("--random", sweep_random, "random kind: naive or regularized");
    sweep->add_option("--jobs", sweep_jobs, "worker threads")->check(CLI::PositiveNumber);
    sweep->add_option("--out", sweep_out, "CSV output path ('-' = stdout)");
    sweep->add_option("--plot", sweep_plot, "also write an SVG chart");

    auto* serve = app.add_subcommand("serve", "serve a saved model as a black-box teacher");
    std::string serve_model, serve_listen = "127.0.0.1:7070";
    std::uint64_t serve_max_sessions = 0;
    std::uint32_t serve_k = default_k;
    serve->add_option("--model", serve_model, "model file")->required();
    serve->add_option("--listen", serve_listen, "listen endpoint host:port (port 0 = pick free)");
    serve->add_option("--max-sessions", serve_max_sessions, "stop after N sessions (0 = forever)");
    serve->add_option("--k", serve_k, "announced k")->check(CLI::PositiveNumber);

    auto* connect = app.add_subcommand("connect", "distill a student from a remote teacher");
    std::string connect_addr, connect_sampler = "regularized", connect_out_model, connect_pseudo;
    std::size_t connect_count = 1000, connect_probes = 200;
    std::uint64_t connect_seed = 0;
    std::vector<std::uint32_t> connect_hidden{64};
    std::uint32_t connect_epochs = 30;
    connect->add_option("--addr", connect_addr, "teacher endpoint host:port")->required();
    connect->add_option("--count", connect_count, "queries to send (multiple of 100)")
        ->check(CLI::PositiveNumber);
    connect->add_option("--sampler", connect_sampler, "query sampler: naive or regularized");
    connect->add_option("--seed", connect_seed, "query and init seed");
    connect->add_option("--hidden", connect_hidden, "student hidden widths")->delimiter(',');
    connect->add_option("--epochs", connect_epochs, "student training epochs")
        ->check(CLI::PositiveNumber);
    connect->add_option("--probes", connect_probes, "fresh queries for the agreement metric");
    connect->add_option("--out-model", connect_out_model, "save the distilled student here");
    connect->add_option("--dump-pseudo", connect_pseudo, "dump pseudo dataset as JSON lines");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::uint64_t gradcheck_seed = 0;
    std::uint32_t gradcheck_models = 20;
    gradcheck->add_option("--seed", gradcheck_seed, "model/batch seed");
    gradcheck->add_option("--models", gradcheck_models, "number of random models")
        ->check(CLI::PositiveNumber);

    auto* demo = app.add_subcommand("demo", "tiny 10-class end-to-end run");
    std::uint64_t demo_seed = 7;
    demo->add_option("--seed", demo_seed, "demo seed");

    run->callback([&] { run_main(run, run_common, run_sampler, run_r, run_random, run_replicas, run_out, run_plot); });
    sweep->callback([&] { sweep_main(sweep, sweep_common, sweep_r_list, sweep_random, sweep_jobs, sweep_out, sweep_plot); });
    serve->callback([&] { serve_main(serve_model, serve_listen, serve_max_sessions, serve_k); });
    connect->callback([&] {
        connect_main(connect_addr, connect_count, connect_sampler, connect_seed, connect_hidden,
                     connect_epochs, connect_probes, connect_out_model, connect_pseudo);
    });
    gradcheck->callback([&] { gradcheck_main(gradcheck_seed, gradcheck_models); });
    demo->callback([&] { demo_main(demo_seed); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const dfrd::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
