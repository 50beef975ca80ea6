#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dfrd/error.hpp"
#include "dfrd/scenario.hpp"

// Report serialization and the mixing-ratio sweep. The CSV layout is the
// stable contract; the SVG chart is a convenience view of the same rows.

namespace dfrd {

inline constexpr const char* report_csv_header = "generation,top1,cumulative_classes,r,seed";

namespace detail {

inline std::string format_top1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace detail

// One row per generation: integer fields verbatim, top1 with 6 decimals,
// line-feed endings. Byte-identical for identical (config, seeds).
inline void write_report_csv(std::span<const GenerationReport> reports, std::ostream& os) {
    if (reports.empty()) throw InvalidInput("write_report_csv: no reports");
    std::string out = report_csv_header;
    out += '\n';
    for (const auto& rep : reports) {
        out += std::to_string(rep.generation);
        out += ',';
        out += detail::format_top1(rep.top1);
        out += ',';
        out += std::to_string(rep.cumulative_experienced);
        out += ',';
        out += std::to_string(rep.sampler_spec.r);
        out += ',';
        out += std::to_string(rep.world_seed);
        out += '\n';
    }
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw IoError("report csv: write failed");
}

inline void write_report_csv(std::span<const GenerationReport> reports, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("report csv: cannot open for write: " + path);
    write_report_csv(reports, os);
}

struct SweepResult {
    struct Row {
        std::uint32_t r = 0;
        std::vector<GenerationReport> reports;
        double final_top1 = 0.0;
    };
    std::vector<Row> rows;  // ordered by r
};

// The mixing ratios studied: 10 * 2^i for i = 0..10.
inline std::vector<std::uint32_t> default_r_list() {
    std::vector<std::uint32_t> rs;
    for (std::uint32_t i = 0, r = 10; i <= 10; ++i, r *= 2) rs.push_back(r);
    return rs;
}

// One experiment per mixing ratio; world, class assignments and every seed
// stream are shared across rows, so only r varies. Rows may be evaluated on
// jobs > 1 worker threads (each row is independent and internally
// sequential).
inline SweepResult sweep_r(const WorldConfig& cfg, const SamplerSpec& base_spec,
                           std::vector<std::uint32_t> r_list, const ScenarioOptions& options = {},
                           unsigned jobs = 1) {
    if (r_list.empty()) throw InvalidInput("sweep_r: empty r list");
    std::sort(r_list.begin(), r_list.end());
    r_list.erase(std::unique(r_list.begin(), r_list.end()), r_list.end());

    SweepResult result;
    result.rows.resize(r_list.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mu;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= r_list.size() || failed.load()) break;
            try {
                SamplerSpec spec = base_spec;
                spec.kind = SamplerKind::mixed;
                spec.r = r_list[i];
                ExperimentResult exp = run_experiment(cfg, spec, options);
                SweepResult::Row& row = result.rows[i];
                row.r = r_list[i];
                row.final_top1 = exp.reports.back().top1;
                row.reports = std::move(exp.reports);
            } catch (const std::exception& e) {
                std::lock_guard lock(err_mu);
                if (!failed.exchange(true)) first_error = e.what();
            }
        }
    };

    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        const unsigned n = std::min<std::size_t>(jobs, r_list.size());
        threads.reserve(n);
        for (unsigned t = 0; t < n; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (failed.load()) throw Error("sweep_r: " + first_error);
    return result;
}

// Concatenated per-generation rows, ordered by r then generation.
inline void write_sweep_csv(const SweepResult& sweep, std::ostream& os) {
    if (sweep.rows.empty()) throw InvalidInput("write_sweep_csv: no rows");
    std::vector<GenerationReport> all;
    for (const auto& row : sweep.rows) {
        all.insert(all.end(), row.reports.begin(), row.reports.end());
    }
    write_report_csv(all, os);
}

inline void write_sweep_csv(const SweepResult& sweep, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("sweep csv: cannot open for write: " + path);
    write_sweep_csv(sweep, os);
}

// ---------------------------------------------------------------------------
// Optional SVG line chart: Top-1 vs generation, one polyline per r.
// ---------------------------------------------------------------------------

namespace detail {

inline void svg_polyline(std::string& out, std::span<const GenerationReport> reports, double x0,
                         double y0, double w, double h, std::uint32_t n_gens, const char* color) {
    out += "  <polyline fill=\"none\" stroke=\"";
    out += color;
    out += "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const double fx = n_gens > 1 ? static_cast<double>(reports[i].generation - 1) / (n_gens - 1) : 0.5;
        const double px = x0 + fx * w;
        const double py = y0 + h - reports[i].top1 * h;
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s%.1f,%.1f", i ? " " : "", px, py);
        out += buf;
    }
    out += "\"/>\n";
}

}  // namespace detail

inline void write_svg_plot(const SweepResult& sweep, std::ostream& os) {
    if (sweep.rows.empty()) throw InvalidInput("write_svg_plot: no rows");
    static constexpr const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                              "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                              "#bcbd22", "#17becf", "#111111"};
    const double x0 = 50, y0 = 20, w = 520, h = 300;
    std::uint32_t n_gens = 1;
    for (const auto& row : sweep.rows) {
        for (const auto& rep : row.reports) n_gens = std::max(n_gens, rep.generation);
    }
    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"360\">\n";
    out += "  <rect x=\"50\" y=\"20\" width=\"520\" height=\"300\" fill=\"white\" stroke=\"#333\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double frac = tick / 4.0;
        const double py = y0 + h - frac * h;
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "  <line x1=\"45\" y1=\"%.1f\" x2=\"50\" y2=\"%.1f\" stroke=\"#333\"/>\n"
                      "  <text x=\"40\" y=\"%.1f\" font-size=\"11\" text-anchor=\"end\">%.2f</text>\n",
                      py, py, py + 4, frac);
        out += buf;
    }
    for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
        const char* color = palette[i % (sizeof palette / sizeof palette[0])];
        detail::svg_polyline(out, sweep.rows[i].reports, x0, y0, w, h, n_gens, color);
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "  <text x=\"585\" y=\"%zu\" font-size=\"11\" fill=\"%s\">r=%u</text>\n",
                      35 + 16 * i, color, sweep.rows[i].r);
        out += buf;
    }
    out += "  <text x=\"310\" y=\"350\" font-size=\"12\" text-anchor=\"middle\">generation</text>\n";
    out += "</svg>\n";
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw IoError("svg plot: write failed");
}

inline void write_svg_plot(const SweepResult& sweep, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("svg plot: cannot open for write: " + path);
    write_svg_plot(sweep, os);
}

inline void write_svg_plot(std::span<const GenerationReport> reports, const std::string& path) {
    SweepResult sweep;
    sweep.rows.push_back(SweepResult::Row{reports.empty() ? 0 : reports.front().sampler_spec.r,
                                          {reports.begin(), reports.end()},
                                          reports.empty() ? 0.0 : reports.back().top1});
    write_svg_plot(sweep, path);
}

}  // namespace dfrd
