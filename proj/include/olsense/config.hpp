#pragma once
//
// Run configuration: one JSON document with sections physics / protocol /
// designer / bayes / jsd / output.  Command-line overrides are merged in as
// "section.key=value" pairs before the result is hashed into the manifest.
//

#include <chrono>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "olsense/bayes.hpp"
#include "olsense/designer.hpp"
#include "olsense/divergence.hpp"
#include "olsense/errors.hpp"
#include "olsense/hashing.hpp"
#include "olsense/protocol_io.hpp"

namespace olsense {

inline constexpr const char* tool_version = "0.1.0";

/// Every key the tool understands, with its default.
inline nlohmann::ordered_json default_config() {
    nlohmann::ordered_json c;
    c["physics"] = {{"mass_amu", constants::rb87_mass_amu},
                    {"wavelength_nm", constants::default_wavelength * 1e9},
                    {"a", 0.0},
                    {"V_L", 10.0},
                    {"prep_V_L", 10.0},
                    {"n_max", default_n_max},
                    {"steps_per_segment", default_steps_per_segment},
                    {"q_points", 1},
                    {"q_width", 0.0}};
    c["protocol"] = {{"file", ""}, {"n_seg", 32}, {"omega_s", default_omega_s}, {"frames_per_segment", 4}};
    Hyperparameters h;
    EnvConfig env;
    c["designer"] = {{"reward", "accel_dsp"},
                     {"episodes", h.episodes},
                     {"gamma", h.gamma},
                     {"tau", h.tau},
                     {"alpha", h.alpha},
                     {"batch", h.batch},
                     {"hidden", h.hidden},
                     {"replay_capacity", h.replay_capacity},
                     {"train_steps_per_episode", h.train_steps_per_episode},
                     {"epsilon_decay", h.epsilon.decay_rate},
                     {"epsilon_floor", h.epsilon.floor},
                     {"epsilon_unit", "step"},
                     {"bellman", "double"},
                     {"seed", h.seed},
                     {"reject_fraction", env.reject_fraction},
                     {"reject_momentum", env.reject_momentum},
                     {"reject_penalty", env.reject_penalty}};
    c["bayes"] = {{"a_range", {-0.05, 0.05}},
                  {"a_points", 101},
                  {"V_range", {9.0, 11.0}},
                  {"V_points", 101},
                  {"truth", {0.0, 10.0}},
                  {"N", {1, 10, 100, 1000, 10000}},
                  {"seeds", {1}},
                  {"workers", 0},
                  {"cache_dir", ""}};
    c["jsd"] = {{"slice", "accel_depth"},
                {"a_range", {-0.2, 0.2}},
                {"a_points", 81},
                {"V_range", {8.0, 12.0}},
                {"V_points", 81},
                {"fixed", {0.0, 10.0}},
                {"effective_range", false}};
    c["output"] = {{"dir", "out"}, {"position_cells", 1}, {"position_samples_per_cell", 64}, {"position_sigma_p", 0.1}};
    return c;
}

namespace detail {

/// Values in `patch` replace those in `base`; unknown sections or keys are errors.
inline void merge_known(nlohmann::ordered_json& base, const nlohmann::json& patch, const std::string& where) {
    if (!patch.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string path = where.empty() ? it.key() : where + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown key '" + path + "'");
        auto& slot = base[it.key()];
        if (slot.is_object())
            merge_known(slot, it.value(), path);
        else if (slot.is_number() != it.value().is_number() && !slot.is_null())
            throw ConfigError("'" + path + "' has the wrong type");
        else
            slot = it.value();
    }
}

}  // namespace detail

/// "section.key=value"; the value is read as JSON when it parses, else as a string.
inline void apply_override(nlohmann::ordered_json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw ConfigError("override '" + assignment + "' is not section.key=value");
    const std::string section = assignment.substr(0, dot);
    const std::string key = assignment.substr(dot + 1, eq - dot - 1);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    detail::merge_known(cfg, nlohmann::json{{section, {{key, value}}}}, "");
}

inline nlohmann::ordered_json load_config(const std::string& path, const std::vector<std::string>& overrides) {
    auto cfg = default_config();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open '" + path + "'");
        nlohmann::json file;
        try {
            file = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(path + ": " + e.what());
        }
        detail::merge_known(cfg, file, "");
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    return cfg;
}

inline std::string config_hash(const nlohmann::ordered_json& cfg) { return content_hash(cfg.dump()); }

// ---- typed views ---------------------------------------------------------------

template <class T>
T get(const nlohmann::ordered_json& cfg, const char* section, const char* key) {
    try {
        return cfg.at(section).at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("'") + section + "." + key + "' has the wrong type");
    }
}

inline std::pair<double, double> get_pair(const nlohmann::ordered_json& cfg, const char* section, const char* key) {
    const auto v = get<std::vector<double>>(cfg, section, key);
    if (v.size() != 2) throw ConfigError(std::string("'") + section + "." + key + "' must have two entries");
    return {v[0], v[1]};
}

inline SimulationConfig simulation_config(const nlohmann::ordered_json& cfg) {
    SimulationConfig sim;
    const double mass = get<double>(cfg, "physics", "mass_amu");
    const double lambda = get<double>(cfg, "physics", "wavelength_nm");
    if (!(mass > 0) || !(lambda > 0)) throw ConfigError("physics.mass_amu and physics.wavelength_nm must be positive");
    sim.scales = recoil_units(mass * constants::amu, lambda * 1e-9);
    sim.n_max = get<int>(cfg, "physics", "n_max");
    if (sim.n_max < 1) throw ConfigError("physics.n_max must be >= 1");
    sim.steps_per_segment = get<int>(cfg, "physics", "steps_per_segment");
    if (sim.steps_per_segment < 1) throw ConfigError("physics.steps_per_segment must be >= 1");
    const int qn = get<int>(cfg, "physics", "q_points");
    const double qw = get<double>(cfg, "physics", "q_width");
    if (qn < 1 || (qn > 1 && !(qw > 0))) throw ConfigError("physics.q_points/q_width invalid");
    sim.q_sampling = QSampling::gaussian(qn, qn > 1 ? qw : 1.0);
    sim.prep_V_L = get<double>(cfg, "physics", "prep_V_L");
    if (!(*sim.prep_V_L >= 0)) throw ConfigError("physics.prep_V_L must be non-negative");
    return sim;
}

inline EstimationPoint estimation_point(const nlohmann::ordered_json& cfg) {
    return {get<double>(cfg, "physics", "a"), get<double>(cfg, "physics", "V_L")};
}

inline Hyperparameters hyperparameters(const nlohmann::ordered_json& cfg) {
    Hyperparameters h;
    h.gamma = get<double>(cfg, "designer", "gamma");
    h.tau = get<double>(cfg, "designer", "tau");
    h.alpha = get<double>(cfg, "designer", "alpha");
    h.episodes = get<int>(cfg, "designer", "episodes");
    h.batch = get<int>(cfg, "designer", "batch");
    h.hidden = get<int>(cfg, "designer", "hidden");
    h.replay_capacity = get<std::size_t>(cfg, "designer", "replay_capacity");
    h.train_steps_per_episode = get<int>(cfg, "designer", "train_steps_per_episode");
    h.epsilon.decay_rate = get<double>(cfg, "designer", "epsilon_decay");
    h.epsilon.floor = get<double>(cfg, "designer", "epsilon_floor");
    const auto unit = get<std::string>(cfg, "designer", "epsilon_unit");
    if (unit == "step")
        h.epsilon.unit = DecayUnit::Step;
    else if (unit == "episode")
        h.epsilon.unit = DecayUnit::Episode;
    else
        throw ConfigError("designer.epsilon_unit must be 'step' or 'episode'");
    const auto bellman = get<std::string>(cfg, "designer", "bellman");
    if (bellman == "double")
        h.bellman = BellmanMode::Double;
    else if (bellman == "vanilla")
        h.bellman = BellmanMode::Vanilla;
    else
        throw ConfigError("designer.bellman must be 'double' or 'vanilla'");
    h.seed = get<std::uint64_t>(cfg, "designer", "seed");
    if (!(h.gamma > 0 && h.gamma <= 1) || !(h.tau > 0 && h.tau <= 1) || !(h.alpha > 0) || h.episodes < 1 ||
        h.batch < 1 || h.hidden < 1 || h.replay_capacity < static_cast<std::size_t>(h.batch) ||
        h.train_steps_per_episode < 0)
        throw ConfigError("designer hyperparameters out of range");
    return h;
}

inline EnvConfig environment(const nlohmann::ordered_json& cfg) {
    EnvConfig env;
    env.sim = simulation_config(cfg);
    env.b = estimation_point(cfg);
    env.n_seg = get<int>(cfg, "protocol", "n_seg");
    if (env.n_seg < 1) throw ConfigError("protocol.n_seg must be >= 1");
    try {
        env.reward = parse_reward_kind(get<std::string>(cfg, "designer", "reward"));
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    env.reject_fraction = get<double>(cfg, "designer", "reject_fraction");
    env.reject_momentum = get<double>(cfg, "designer", "reject_momentum");
    env.reject_penalty = get<double>(cfg, "designer", "reject_penalty");
    return env;
}

inline Axis config_axis(const nlohmann::ordered_json& cfg, const char* section, const char* range, const char* points) {
    const auto [lo, hi] = get_pair(cfg, section, range);
    const int n = get<int>(cfg, section, points);
    if (n < 1 || hi < lo || (n == 1 && hi != lo))
        throw ConfigError(std::string(section) + "." + range + " / " + points + " do not describe an axis");
    return uniform_axis(lo, hi, n);
}

// ---- manifest ------------------------------------------------------------------

/// Provenance for one command invocation.  The id covers everything that
/// determines the outputs; wall-clock time is recorded but not hashed.
struct RunManifest {
    std::string command;
    nlohmann::ordered_json config;
    std::string protocol_hash;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> outputs;
    double wall_seconds = 0;

    std::string config_digest() const { return config_hash(config); }

    std::string id() const {
        nlohmann::ordered_json j;
        j["tool_version"] = tool_version;
        j["command"] = command;
        j["config_hash"] = config_digest();
        j["protocol_hash"] = protocol_hash;
        j["seeds"] = seeds;
        return content_hash(j.dump());
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["run_id"] = id();
        j["tool_version"] = tool_version;
        j["command"] = command;
        j["config_hash"] = config_digest();
        j["seeds"] = seeds;
        const auto& p = config.at("physics");
        j["physics"] = {{"mass_amu", p.at("mass_amu")},
                        {"wavelength_nm", p.at("wavelength_nm")},
                        {"V_L", p.at("V_L")},
                        {"n_max", p.at("n_max")},
                        {"dt_over_segment", 1.0 / p.at("steps_per_segment").get<double>()}};
        j["protocol_hash"] = protocol_hash;
        j["outputs"] = outputs;
        j["wall_clock_seconds"] = wall_seconds;
        j["config"] = config;
        return j;
    }
};

}  // namespace olsense
