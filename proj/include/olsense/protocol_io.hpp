#pragma once
//
// Protocol files: JSON with amplitudes stored as exact decimal strings so a
// read/write round trip reproduces every bit.
//
//   {
//     "format_version": 1,
//     "omega_s_over_omega_R": 11.5,
//     "n_max": 10,
//     "q_list": [0.0],
//     "q_weights": [1.0],
//     "segment_amplitudes": ["0", "0.7853981633974483", ...],
//     "dt_over_segment": 0.0009765625,
//     "metadata": { ... }
//   }
//

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "olsense/dynamics.hpp"
#include "olsense/errors.hpp"
#include "olsense/hashing.hpp"

namespace olsense {

inline constexpr int protocol_format_version = 1;

struct ProtocolFile {
    ControlProtocol protocol;
    int n_max = default_n_max;
    QSampling q_sampling;
    int steps_per_segment = default_steps_per_segment;
    nlohmann::json metadata = nlohmann::json::object();

    /// Applies the numerical settings stored with the protocol.
    SimulationConfig apply(SimulationConfig cfg) const {
        cfg.n_max = n_max;
        cfg.q_sampling = q_sampling;
        cfg.steps_per_segment = steps_per_segment;
        return cfg;
    }
};

inline ProtocolFile make_protocol_file(const ControlProtocol& p, const SimulationConfig& cfg,
                                       nlohmann::json metadata = nlohmann::json::object()) {
    return ProtocolFile{p, cfg.n_max, cfg.q_sampling, cfg.steps_per_segment, std::move(metadata)};
}

inline nlohmann::ordered_json protocol_to_json(const ProtocolFile& f) {
    nlohmann::ordered_json j;
    j["format_version"] = protocol_format_version;
    j["omega_s_over_omega_R"] = f.protocol.omega_s;
    j["n_max"] = f.n_max;
    j["q_list"] = f.q_sampling.q;
    j["q_weights"] = f.q_sampling.weights;
    auto amps = nlohmann::ordered_json::array();
    for (double a : f.protocol.segment_amplitudes) amps.push_back(exact_decimal(a));
    j["segment_amplitudes"] = amps;
    j["dt_over_segment"] = 1.0 / f.steps_per_segment;
    j["metadata"] = f.metadata;
    return j;
}

inline std::string protocol_to_string(const ProtocolFile& f) { return protocol_to_json(f).dump(2) + "\n"; }

/// Hash of the physics-relevant content (metadata excluded).
inline std::string protocol_hash(const ProtocolFile& f) {
    auto j = protocol_to_json(f);
    j.erase("metadata");
    return content_hash(j.dump());
}

namespace detail {
inline int line_of_offset(const std::string& text, std::size_t offset) {
    int line = 1;
    for (std::size_t i = 0; i < text.size() && i < offset; ++i)
        if (text[i] == '\n') ++line;
    return line;
}

template <class T>
T require(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) throw ParseError(key, "missing field");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ParseError(key, "wrong type");
    }
}
}  // namespace detail

inline ProtocolFile protocol_from_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("line " + std::to_string(detail::line_of_offset(text, e.byte)), "malformed JSON");
    }
    if (!j.is_object()) throw ParseError("line 1", "expected a JSON object");

    const int version = detail::require<int>(j, "format_version");
    if (version != protocol_format_version)
        throw ParseError("format_version", "unsupported version " + std::to_string(version));

    ProtocolFile f;
    f.protocol.omega_s = detail::require<double>(j, "omega_s_over_omega_R");
    if (!(f.protocol.omega_s > 0)) throw ParseError("omega_s_over_omega_R", "must be positive");
    f.n_max = detail::require<int>(j, "n_max");
    if (f.n_max < 1) throw ParseError("n_max", "must be >= 1");

    f.q_sampling.q = detail::require<std::vector<double>>(j, "q_list");
    if (f.q_sampling.q.empty()) throw ParseError("q_list", "empty");
    for (std::size_t k = 0; k < f.q_sampling.q.size(); ++k) {
        const double q = f.q_sampling.q[k];
        if (!(q >= -1.0 && q < 1.0)) throw ParseError("q_list[" + std::to_string(k) + "]", "outside [-1, 1)");
    }
    if (j.contains("q_weights")) {
        f.q_sampling.weights = detail::require<std::vector<double>>(j, "q_weights");
        if (f.q_sampling.weights.size() != f.q_sampling.q.size())
            throw ParseError("q_weights", "length differs from q_list");
    } else {
        f.q_sampling.weights.assign(f.q_sampling.q.size(), 1.0 / static_cast<double>(f.q_sampling.q.size()));
    }

    if (!j.contains("segment_amplitudes")) throw ParseError("segment_amplitudes", "missing field");
    const auto& amps = j.at("segment_amplitudes");
    if (!amps.is_array() || amps.empty()) throw ParseError("segment_amplitudes", "expected a non-empty array");
    for (std::size_t k = 0; k < amps.size(); ++k) {
        const std::string where = "segment_amplitudes[" + std::to_string(k) + "]";
        if (!amps[k].is_string()) throw ParseError(where, "amplitudes are stored as decimal strings");
        double v;
        if (!parse_decimal(amps[k].get<std::string>(), v) || !std::isfinite(v))
            throw ParseError(where, "not a finite decimal number");
        f.protocol.segment_amplitudes.push_back(v);
    }

    const double dt_frac = detail::require<double>(j, "dt_over_segment");
    if (!(dt_frac > 0 && dt_frac <= 1)) throw ParseError("dt_over_segment", "must lie in (0, 1]");
    const double steps = 1.0 / dt_frac;
    f.steps_per_segment = static_cast<int>(std::lround(steps));
    if (std::abs(steps - f.steps_per_segment) > 1e-9 * steps)
        throw ParseError("dt_over_segment", "segment is not a whole number of steps");

    if (j.contains("metadata")) f.metadata = j.at("metadata");
    return f;
}

inline ProtocolFile read_protocol_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, "cannot open protocol file");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return protocol_from_string(ss.str());
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.where(), std::string(e.what()).substr(e.where().size() + 2));
    }
}

inline void write_protocol_file(const std::string& path, const ProtocolFile& f) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write " + path);
    out << protocol_to_string(f);
}

}  // namespace olsense
