#pragma once

// JSON run configuration shared by the train and encode commands.
// Requires nlohmann/json (vendor/json.hpp).

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fph/backbone.hpp"
#include "fph/errors.hpp"
#include "fph/model.hpp"
#include "fph/pyramid.hpp"
#include "fph/training.hpp"

namespace fph {

struct RunConfig {
    TrainConfig train;
    std::size_t q = 16;
    std::string backbone = "desk"; // "desk" or "paper"
    std::vector<StageSpec> stages = desk_stage_spec();
    std::size_t input_size = 64;
    std::filesystem::path dataset;    // manifest.csv
    std::filesystem::path output_dir; // checkpoint and loss trace go here
    CodeSource code_source = CodeSource::consensus;

    /// Throws ConfigError naming the offending field.
    void validate(bool require_paths = true) const {
        HashConfig{q}.validate();
        train.validate();
        if (require_paths) {
            if (dataset.empty()) throw ConfigError("dataset: path is required");
            if (!std::filesystem::exists(dataset)) {
                throw ConfigError("dataset: '" + dataset.string() + "' does not exist");
            }
            if (output_dir.empty()) throw ConfigError("output_dir: path is required");
        }
        if (stages.size() != kStageCount) throw ConfigError("backbone: expected 5 stages");
        if (input_size == 0 || input_size % 32 != 0) {
            throw ConfigError("input_size: must be a positive multiple of 32, got " + std::to_string(input_size));
        }
        std::size_t side = input_size;
        for (std::size_t s = 0; s < kStageCount; ++s) {
            if (stages[s].downsample) side /= 2;
            if (s >= 2 && side % lateral_pool_side(s) != 0) {
                throw ConfigError("input_size: stage " + std::to_string(s) + " side " + std::to_string(side) +
                                  " is not divisible by its pooling target");
            }
        }
    }

    HashingNetwork build_network() const { return HashingNetwork(stages, input_size, HashConfig{q}, train.seed); }
};

namespace detail {

inline const std::set<std::string>& run_config_keys() {
    static const std::set<std::string> keys = {
        "profile", "q",        "backbone",     "input_size", "dataset",       "output_dir",  "code_source",
        "margin",  "lr",       "momentum",     "weight_decay", "step_size",   "schedule_unit", "epochs",
        "batch_size", "triplets_per_anchor", "grad_clip", "seed"};
    return keys;
}

template <class T>
T field(const nlohmann::json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
    }
}

inline std::size_t count_field(const nlohmann::json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(std::string(key) + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
}

inline double real_field(const nlohmann::json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_number()) throw ConfigError(std::string(key) + ": expected a number");
    return v.get<double>();
}

} // namespace detail

inline CodeSource parse_code_source(const std::string& s) {
    if (s == "consensus") return CodeSource::consensus;
    if (s == "vertical") return CodeSource::vertical;
    throw ConfigError("code_source: expected 'consensus' or 'vertical', got '" + s + "'");
}

/// Builds a RunConfig from JSON. Unknown keys are rejected. `profile` selects
/// the starting defaults ("desk" or "paper"); explicit keys override them.
/// Relative paths resolve against `base_dir`.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!detail::run_config_keys().count(key)) throw ConfigError(key + ": unknown configuration key");
    }

    RunConfig cfg;
    if (j.contains("profile")) {
        const auto profile = detail::field<std::string>(j, "profile");
        if (profile == "paper") {
            cfg.train = paper_train_profile();
            cfg.backbone = "paper";
            cfg.stages = paper_stage_spec();
            cfg.input_size = 224;
        } else if (profile != "desk") {
            throw ConfigError("profile: expected 'desk' or 'paper', got '" + profile + "'");
        }
    }
    if (j.contains("q")) cfg.q = detail::count_field(j, "q");
    if (j.contains("backbone")) {
        cfg.backbone = detail::field<std::string>(j, "backbone");
        if (cfg.backbone == "desk") {
            cfg.stages = desk_stage_spec();
        } else if (cfg.backbone == "paper") {
            cfg.stages = paper_stage_spec();
        } else {
            throw ConfigError("backbone: expected 'desk' or 'paper', got '" + cfg.backbone + "'");
        }
    }
    if (j.contains("input_size")) cfg.input_size = detail::count_field(j, "input_size");
    auto resolve = [&](const char* key) {
        std::filesystem::path p = detail::field<std::string>(j, key);
        return p.is_relative() && !p.empty() && !base_dir.empty() ? base_dir / p : p;
    };
    if (j.contains("dataset")) cfg.dataset = resolve("dataset");
    if (j.contains("output_dir")) cfg.output_dir = resolve("output_dir");
    if (j.contains("code_source")) cfg.code_source = parse_code_source(detail::field<std::string>(j, "code_source"));

    auto& t = cfg.train;
    if (j.contains("margin")) t.margin = detail::real_field(j, "margin");
    if (j.contains("lr")) t.lr = detail::real_field(j, "lr");
    if (j.contains("momentum")) t.momentum = detail::real_field(j, "momentum");
    if (j.contains("weight_decay")) t.weight_decay = detail::real_field(j, "weight_decay");
    if (j.contains("step_size")) t.step_size = detail::count_field(j, "step_size");
    if (j.contains("schedule_unit")) {
        const auto unit = detail::field<std::string>(j, "schedule_unit");
        if (unit == "epoch") {
            t.schedule_unit = ScheduleUnit::epoch;
        } else if (unit == "iteration") {
            t.schedule_unit = ScheduleUnit::iteration;
        } else {
            throw ConfigError("schedule_unit: expected 'epoch' or 'iteration', got '" + unit + "'");
        }
    }
    if (j.contains("epochs")) t.epochs = detail::count_field(j, "epochs");
    if (j.contains("batch_size")) t.batch_size = detail::count_field(j, "batch_size");
    if (j.contains("triplets_per_anchor")) t.triplets_per_anchor = detail::count_field(j, "triplets_per_anchor");
    if (j.contains("grad_clip")) t.grad_clip = detail::real_field(j, "grad_clip");
    if (j.contains("seed")) t.seed = detail::field<std::uint64_t>(j, "seed");
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_run_config(j, path.parent_path());
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["q"] = cfg.q;
    j["backbone"] = cfg.backbone;
    j["input_size"] = cfg.input_size;
    j["dataset"] = cfg.dataset.string();
    j["output_dir"] = cfg.output_dir.string();
    j["code_source"] = cfg.code_source == CodeSource::consensus ? "consensus" : "vertical";
    const auto& t = cfg.train;
    if (t.margin) j["margin"] = *t.margin;
    j["lr"] = t.lr;
    j["momentum"] = t.momentum;
    j["weight_decay"] = t.weight_decay;
    j["step_size"] = t.step_size;
    j["schedule_unit"] = t.schedule_unit == ScheduleUnit::epoch ? "epoch" : "iteration";
    j["epochs"] = t.epochs;
    j["batch_size"] = t.batch_size;
    j["triplets_per_anchor"] = t.triplets_per_anchor;
    j["grad_clip"] = t.grad_clip;
    j["seed"] = t.seed;
    return j;
}

} // namespace fph
