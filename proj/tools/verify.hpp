#pragma once
// `olsense verify`: fast self-checks of the numerics against closed forms and
// finite differences, plus golden-file comparison for the bundled protocols.

#include <unistd.h>

#include <functional>
#include <iomanip>
#include <sstream>

#include "commands.hpp"
#include "olsense/freespace.hpp"

namespace olsense::cli {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string measured;
    std::string bound;
};

namespace verify_detail {

inline std::string sci(double x) {
    std::ostringstream os;
    os << std::setprecision(3) << std::scientific << x;
    return os.str();
}

inline double rel(double a, double b, double scale) { return std::abs(a - b) / scale; }

/// Worst element-wise mismatch, off-diagonals measured against sqrt(M_aa M_VV).
inline double matrix_mismatch(const Eigen::Matrix2d& got, const Eigen::Matrix2d& ref) {
    const double off = std::sqrt(std::abs(ref(0, 0) * ref(1, 1)));
    return std::max({rel(got(0, 0), ref(0, 0), std::abs(ref(0, 0))), rel(got(1, 1), ref(1, 1), std::abs(ref(1, 1))),
                     rel(got(0, 1), ref(0, 1), off)});
}

}  // namespace verify_detail

struct BundledProtocol {
    std::string name;
    std::string path;
};

inline std::vector<BundledProtocol> bundled_protocols(const fs::path& data_dir) {
    std::vector<BundledProtocol> out;
    for (const char* n : {"accel_dsp", "accel_spp", "lattice_dsp"})
        out.push_back({n, (data_dir / "protocols" / (std::string(n) + ".json")).string()});
    return out;
}

/// Config for the golden simulate run of one bundled protocol.
inline Json golden_config(const Json& base, const std::string& protocol_path, const fs::path& out_dir) {
    Json cfg = base;
    cfg["protocol"]["file"] = protocol_path;
    cfg["protocol"]["frames_per_segment"] = 1;
    cfg["output"]["dir"] = out_dir.string();
    return cfg;
}

inline std::vector<std::string> data_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);)
        if (line.rfind("#", 0) != 0) out.push_back(line);
    return out;
}

inline const char* golden_files[] = {"momentum.csv", "bands.csv", "fisher.csv"};

class Verifier {
public:
    Verifier(Json cfg, fs::path data_dir) : cfg_(std::move(cfg)), data_dir_(std::move(data_dir)) {}

    int run(bool regenerate_golden) {
        sim_ = simulation_config(cfg_);
        b_ = EstimationPoint{0.0, 10.0};
        check("protocol_files", [&] { return check_protocol_files(); });
        if (!protocols_.empty()) {
            const auto& dsp = protocols_.front();
            check("free_space_oracle", [&] { return check_free_space(); });
            check("norm_conservation", [&] { return check_norm(); });
            check("rk4_convergence", [&] { return check_convergence(dsp.protocol); });
            check("fd_derivatives", [&] { return check_fd(dsp.protocol); });
            check("qfim_dominates_cfim", [&] { return check_ordering(); });
            check("jsd_curvature", [&] { return check_curvature(dsp.protocol); });
            if (regenerate_golden)
                regenerate();
            else
                check("golden_files", [&] { return check_golden(); });
        }
        print();
        for (const auto& r : results_)
            if (!r.pass) return 1;
        return 0;
    }

private:
    struct Loaded {
        std::string name;
        ControlProtocol protocol;
    };

    Json cfg_;
    fs::path data_dir_;
    SimulationConfig sim_;
    EstimationPoint b_;
    std::vector<Loaded> protocols_;
    std::vector<CheckResult> results_;

    void check(const std::string& name, const std::function<CheckResult()>& body) {
        CheckResult r;
        try {
            r = body();
        } catch (const std::exception& e) {
            r.pass = false;
            r.measured = std::string("error: ") + e.what();
        }
        r.name = name;
        results_.push_back(r);
    }

    void print() const {
        std::cout << std::left << std::setw(22) << "check" << std::setw(6) << "result" << "  measured / bound\n";
        for (const auto& r : results_)
            std::cout << std::setw(22) << r.name << std::setw(6) << (r.pass ? "PASS" : "FAIL") << "  " << r.measured
                      << (r.bound.empty() ? "" : "  (" + r.bound + ")") << "\n";
    }

    AugmentedState propagate(const ControlProtocol& p, const SimulationConfig& sim) const {
        const auto basis = build_basis(sim.n_max);
        return propagate_augmented(AugmentedState::initial(basis, ground_state(b_.V_L, basis)), b_, p, sim);
    }

    CheckResult check_protocol_files() {
        CheckResult r;
        std::string failures;
        for (const auto& bp : bundled_protocols(data_dir_)) {
            try {
                protocols_.push_back({bp.name, read_protocol_file(bp.path).protocol});
            } catch (const ParseError& e) {
                failures += std::string(failures.empty() ? "" : "; ") + e.what();
            }
        }
        r.pass = failures.empty();
        r.measured = r.pass ? std::to_string(protocols_.size()) + " protocols parsed" : failures;
        if (!r.pass) protocols_.clear();
        return r;
    }

    CheckResult check_free_space() const {
        double worst = 0;
        for (double p0 : {2.0, 4.0})
            for (double T_us : {100.0, 684.0}) {
                SimulationConfig cfg = sim_;
                const double T = cfg.scales.recoil_time(T_us * 1e-6);
                cfg.steps_per_segment = std::max(sim_.steps_per_segment, static_cast<int>(std::ceil(400 * T * p0 * p0)));  // RK4 error tracks the p0^2 phase rate
                const auto basis = build_basis(static_cast<int>(p0 / 2) + 2);
                const auto out = propagate_augmented(AugmentedState::initial(basis, split_state(basis, p0)), {0.0, 0.0},
                                                     ControlProtocol::zeros(1, std::numbers::pi / T), cfg);
                const double ref = ramsey_fisher(p0, T, cfg.scales);
                worst = std::max(worst, std::abs(qfim(out)(0, 0) - ref) / ref);
            }
        return {"", worst <= 1e-8, "max rel err " + verify_detail::sci(worst), "<= 1e-8"};
    }

    CheckResult check_norm() const {
        double worst = 0;
        for (const auto& p : protocols_) worst = std::max(worst, propagate(p.protocol, sim_).diagnostics.max_norm_drift);
        return {"", worst <= 1e-8, "max drift " + verify_detail::sci(worst), "<= 1e-8"};
    }

    CheckResult check_convergence(const ControlProtocol& p) const {
        std::vector<StateVector> psi;
        for (int m : {1, 2, 4}) {
            SimulationConfig cfg = sim_;
            cfg.steps_per_segment = sim_.steps_per_segment * m;
            cfg.norm_tolerance = 1.0;  // the ratio is the check here
            psi.push_back(propagate(p, cfg).psi);
        }
        const double ratio = (psi[0] - psi[1]).norm() / (psi[1] - psi[2]).norm();
        return {"", std::abs(ratio - 16.0) <= 0.3 * 16.0, "dt-halving ratio " + std::to_string(ratio), "16 +- 30%"};
    }

    CheckResult check_fd(const ControlProtocol& p) const {
        const auto out = propagate(p, sim_);
        const auto basis = build_basis(sim_.n_max);
        const StateVector g = ground_state(b_.V_L, basis);
        const double da = 1e-4, dV = 1e-3;
        auto at = [&](double a, double V) { return propagate_state(g, basis, {a, V}, p, sim_); };
        AugmentedState fd = out;
        fd.dpsi_da = (at(b_.a + da, b_.V_L) - at(b_.a - da, b_.V_L)) / (2 * da);
        fd.dpsi_dV = (at(b_.a, b_.V_L + dV) - at(b_.a, b_.V_L - dV)) / (2 * dV);
        const double e = std::max(verify_detail::matrix_mismatch(cfim(out), cfim(fd)),
                                  verify_detail::matrix_mismatch(qfim(out), qfim(fd)));
        return {"", e <= 1e-4, "max rel err " + verify_detail::sci(e), "<= 1e-4"};
    }

    CheckResult check_ordering() const {
        double worst = std::numeric_limits<double>::infinity();
        std::mt19937_64 rng(2024);
        std::uniform_int_distribution<int> action(0, n_actions - 1);
        std::vector<ControlProtocol> ps;
        for (const auto& p : protocols_) ps.push_back(p.protocol);
        for (int k = 0; k < 10; ++k) {
            ControlProtocol p = ControlProtocol::zeros(8);
            for (auto& a : p.segment_amplitudes) a = ActionSet::amplitude(action(rng));
            ps.push_back(p);
        }
        for (const auto& p : ps) {
            const auto s = propagate(p, sim_);
            worst = std::min(worst, min_eigenvalue(qfim(s) - cfim(s)));
        }
        return {"", worst >= -1e-8, "min eig(F - I) " + verify_detail::sci(worst), ">= -1e-8"};
    }

    CheckResult check_curvature(const ControlProtocol& p) const {
        SimulationConfig cfg = sim_;
        cfg.prep_V_L = b_.V_L;
        const auto I = cfim(propagate(p, cfg));
        const double ha = 0.05 / std::sqrt(I(0, 0)), hV = 0.05 / std::sqrt(I(1, 1));
        const auto grid = build_likelihood_grid(p, centred_axis(b_.a, ha, 5), centred_axis(b_.V_L, hV, 5), cfg,
                                                GridBuildOptions{0, "", false});
        const auto fit = curvature_check(grid, b_);
        const double e = verify_detail::matrix_mismatch(fit.cfim_estimate, I);
        return {"", e <= 0.05, "max rel err " + verify_detail::sci(e), "<= 5%"};
    }

    fs::path golden_dir(const std::string& name) const { return data_dir_ / "golden" / name; }

    CheckResult check_golden() const {
        const auto tmp = fs::temp_directory_path() / ("olsense-verify-" + std::to_string(::getpid()));
        std::string bad;
        for (const auto& p : protocols_) {
            const auto out = tmp / p.name;
            const auto path = (data_dir_ / "protocols" / (p.name + ".json")).string();
            {
                std::ostringstream sink;
                auto* old = std::cout.rdbuf(sink.rdbuf());
                try {
                    cmd_simulate(golden_config(cfg_, path, out));
                } catch (...) {
                    std::cout.rdbuf(old);
                    throw;
                }
                std::cout.rdbuf(old);
            }
            for (const char* f : golden_files) {
                const auto ref = golden_dir(p.name) / f;
                if (!fs::exists(ref)) {
                    bad += " " + p.name + "/" + f + " (missing)";
                } else if (data_lines(ref) != data_lines(out / f)) {
                    bad += " " + p.name + "/" + f;
                }
            }
        }
        fs::remove_all(tmp);
        return {"", bad.empty(), bad.empty() ? "bit-identical" : "differs:" + bad, ""};
    }

    void regenerate() {
        for (const auto& p : protocols_) {
            const auto path = (data_dir_ / "protocols" / (p.name + ".json")).string();
            const auto out = golden_dir(p.name);
            std::ostringstream sink;
            auto* old = std::cout.rdbuf(sink.rdbuf());
            try {
                cmd_simulate(golden_config(cfg_, path, out));
            } catch (...) {
                std::cout.rdbuf(old);
                throw;
            }
            std::cout.rdbuf(old);
            // Only the compared tables are kept.
            for (const auto& e : fs::directory_iterator(out)) {
                const auto n = e.path().filename().string();
                if (std::find(std::begin(golden_files), std::end(golden_files), n) == std::end(golden_files))
                    fs::remove(e.path());
            }
        }
        results_.push_back({"golden_files", true, "regenerated under " + (data_dir_ / "golden").string(), ""});
    }
};

}  // namespace olsense::cli
