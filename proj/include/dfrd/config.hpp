#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dfrd/error.hpp"
#include "dfrd/samplers.hpp"
#include "dfrd/scenario.hpp"

// Experiment config files: one JSON document carrying the world, the query
// sampler and the training knobs. Every field is optional and defaults to
// the built-in value; unknown fields are rejected so typos fail loudly.
//
//   {
//     "config_version": 1,
//     "world":    { "n_classes": 100, "n_seasons": 10, ... },
//     "sampler":  { "kind": "mixed", "r": 10, ... },
//     "train":    { "epochs": 30, "batch_size": 32, ... },
//     "scenario": { "hidden_dims": [256], "teacher_epochs": 120, ... }
//   }

namespace dfrd {

struct ExperimentConfig {
    WorldConfig world;
    SamplerSpec sampler;
    ScenarioOptions scenario;  // scenario.student_train mirrors the "train" block
};

inline SamplerKind sampler_kind_from_name(std::string_view name) {
    if (name == "oracle") return SamplerKind::oracle;
    if (name == "naive" || name == "naive_random") return SamplerKind::naive_random;
    if (name == "regularized" || name == "regularized_random") return SamplerKind::regularized_random;
    if (name == "mixed") return SamplerKind::mixed;
    throw InvalidInput("unknown sampler kind '" + std::string(name) +
                       "' (expected oracle, naive, regularized or mixed)");
}

inline RandomKind random_kind_from_name(std::string_view name) {
    if (name == "naive" || name == "naive_random") return RandomKind::naive;
    if (name == "regularized" || name == "regularized_random") return RandomKind::regularized;
    throw InvalidInput("unknown random kind '" + std::string(name) +
                       "' (expected naive or regularized)");
}

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const char* where) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* key : allowed) {
            if (item.key() == key) {
                ok = true;
                break;
            }
        }
        if (!ok) throw InvalidInput(std::string("config: unknown field '") + item.key() + "' in " + where);
    }
}

template <class T>
void fetch(const nlohmann::json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw InvalidInput(std::string("config: field '") + key + "' has the wrong type");
    }
}

inline void fetch_string(const nlohmann::json& j, const char* key, std::string& out) {
    fetch<std::string>(j, key, out);
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidInput("config: top level must be a JSON object");
    detail::check_keys(j, {"config_version", "world", "sampler", "train", "scenario"}, "config");
    std::uint32_t version = 1;
    detail::fetch(j, "config_version", version);
    if (version != 1) {
        throw InvalidInput("config: unsupported config_version " + std::to_string(version));
    }

    ExperimentConfig cfg;
    if (auto it = j.find("world"); it != j.end()) {
        const auto& w = *it;
        detail::check_keys(w,
                           {"n_classes", "n_seasons", "signal_strength", "drift_scale", "noise_scale",
                            "samples_per_class_per_season", "experience_prob", "seed"},
                           "world");
        detail::fetch(w, "n_classes", cfg.world.n_classes);
        detail::fetch(w, "n_seasons", cfg.world.n_seasons);
        detail::fetch(w, "signal_strength", cfg.world.signal_strength);
        detail::fetch(w, "drift_scale", cfg.world.drift_scale);
        detail::fetch(w, "noise_scale", cfg.world.noise_scale);
        detail::fetch(w, "samples_per_class_per_season", cfg.world.samples_per_class_per_season);
        detail::fetch(w, "experience_prob", cfg.world.experience_prob);
        detail::fetch(w, "seed", cfg.world.seed);
    }
    if (auto it = j.find("sampler"); it != j.end()) {
        const auto& s = *it;
        detail::check_keys(s, {"kind", "r", "random_kind", "seed", "naive_bypass_rrf"}, "sampler");
        std::string kind, random_kind;
        detail::fetch_string(s, "kind", kind);
        detail::fetch_string(s, "random_kind", random_kind);
        if (!kind.empty()) cfg.sampler.kind = sampler_kind_from_name(kind);
        if (!random_kind.empty()) cfg.sampler.random_kind = random_kind_from_name(random_kind);
        detail::fetch(s, "r", cfg.sampler.r);
        detail::fetch(s, "seed", cfg.sampler.seed);
        detail::fetch(s, "naive_bypass_rrf", cfg.sampler.naive_bypass_rrf);
    }
    if (auto it = j.find("train"); it != j.end()) {
        const auto& t = *it;
        detail::check_keys(t, {"epochs", "batch_size", "step_size", "shuffle_seed"}, "train");
        detail::fetch(t, "epochs", cfg.scenario.student_train.epochs);
        detail::fetch(t, "batch_size", cfg.scenario.student_train.batch_size);
        detail::fetch(t, "step_size", cfg.scenario.student_train.step_size);
        detail::fetch(t, "shuffle_seed", cfg.scenario.student_train.shuffle_seed);
    }
    if (auto it = j.find("scenario"); it != j.end()) {
        const auto& s = *it;
        detail::check_keys(s,
                           {"hidden_dims", "teacher_epochs", "teacher_batch_size",
                            "teacher_step_size", "base_count", "distill"},
                           "scenario");
        detail::fetch(s, "hidden_dims", cfg.scenario.hidden_dims);
        detail::fetch(s, "teacher_epochs", cfg.scenario.teacher_train.epochs);
        detail::fetch(s, "teacher_batch_size", cfg.scenario.teacher_train.batch_size);
        detail::fetch(s, "teacher_step_size", cfg.scenario.teacher_train.step_size);
        detail::fetch(s, "base_count", cfg.scenario.base_count);
        std::string distill;
        detail::fetch_string(s, "distill", distill);
        if (distill == "hard") {
            cfg.scenario.mode = DistillMode::hard;
        } else if (distill == "soft") {
            cfg.scenario.mode = DistillMode::soft;
        } else if (!distill.empty()) {
            throw InvalidInput("config: distill must be 'hard' or 'soft'");
        }
        if (cfg.scenario.hidden_dims.empty()) {
            throw InvalidInput("config: hidden_dims must be nonempty");
        }
    }
    validate_world_config(cfg.world);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open: " + path);
    const nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_discarded()) throw InvalidInput("config: " + path + " is not valid JSON");
    return parse_config(j);
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["config_version"] = 1;
    j["world"] = {{"n_classes", cfg.world.n_classes},
                  {"n_seasons", cfg.world.n_seasons},
                  {"signal_strength", cfg.world.signal_strength},
                  {"drift_scale", cfg.world.drift_scale},
                  {"noise_scale", cfg.world.noise_scale},
                  {"samples_per_class_per_season", cfg.world.samples_per_class_per_season},
                  {"experience_prob", cfg.world.experience_prob},
                  {"seed", cfg.world.seed}};
    const char* kind = "oracle";
    switch (cfg.sampler.kind) {
        case SamplerKind::oracle: kind = "oracle"; break;
        case SamplerKind::naive_random: kind = "naive_random"; break;
        case SamplerKind::regularized_random: kind = "regularized_random"; break;
        case SamplerKind::mixed: kind = "mixed"; break;
    }
    j["sampler"] = {{"kind", kind},
                    {"r", cfg.sampler.r},
                    {"random_kind",
                     cfg.sampler.random_kind == RandomKind::naive ? "naive" : "regularized"},
                    {"seed", cfg.sampler.seed},
                    {"naive_bypass_rrf", cfg.sampler.naive_bypass_rrf}};
    j["train"] = {{"epochs", cfg.scenario.student_train.epochs},
                  {"batch_size", cfg.scenario.student_train.batch_size},
                  {"step_size", cfg.scenario.student_train.step_size},
                  {"shuffle_seed", cfg.scenario.student_train.shuffle_seed}};
    j["scenario"] = {{"hidden_dims", cfg.scenario.hidden_dims},
                     {"teacher_epochs", cfg.scenario.teacher_train.epochs},
                     {"teacher_batch_size", cfg.scenario.teacher_train.batch_size},
                     {"teacher_step_size", cfg.scenario.teacher_train.step_size},
                     {"base_count", cfg.scenario.base_count},
                     {"distill", cfg.scenario.mode == DistillMode::hard ? "hard" : "soft"}};
    return j;
}

inline void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("config: cannot open for write: " + path);
    os << config_to_json(cfg).dump(2) << '\n';
    if (!os) throw IoError("config: write failed");
}

}  // namespace dfrd
