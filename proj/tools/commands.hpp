#pragma once
// Subcommand bodies for the olsense tool.  Each one takes the merged config,
// writes its outputs under output.dir and finishes with manifest.json.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "olsense/config.hpp"

namespace olsense::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct Run {
    RunManifest manifest;
    fs::path out_dir;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    Run(std::string command, Json cfg) {
        manifest.command = std::move(command);
        manifest.config = std::move(cfg);
        out_dir = get<std::string>(manifest.config, "output", "dir");
    }

    /// Opens an output file and stamps it with the manifest id.
    std::ofstream open_csv(const std::string& name) {
        fs::create_directories(out_dir);
        std::ofstream f(out_dir / name);
        if (!f) throw ConfigError("cannot write '" + (out_dir / name).string() + "'");
        f << "# manifest " << manifest.id() << "\n";
        manifest.outputs.push_back(name);
        return f;
    }

    /// Registers an output written by a library routine that stamps the manifest itself.
    fs::path output_path(const std::string& name) {
        fs::create_directories(out_dir);
        manifest.outputs.push_back(name);
        return out_dir / name;
    }

    void finish() {
        manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        fs::create_directories(out_dir);
        std::ofstream(out_dir / "manifest.json") << manifest.to_json().dump(2) << "\n";
    }
};

inline std::string num(double x) { return exact_decimal(x); }

/// The protocol named by protocol.file; "zeros" gives an unmodulated protocol of protocol.n_seg segments.
inline ControlProtocol load_protocol(const Json& cfg, const SimulationConfig& sim) {
    const auto file = get<std::string>(cfg, "protocol", "file");
    if (file.empty()) throw ConfigError("protocol.file is not set");
    if (file == "zeros") {
        const int n = get<int>(cfg, "protocol", "n_seg");
        if (n < 1) throw ConfigError("protocol.n_seg must be >= 1");
        return ControlProtocol::zeros(static_cast<std::size_t>(n), get<double>(cfg, "protocol", "omega_s"));
    }
    const auto pf = read_protocol_file(file);
    if (pf.n_max != sim.n_max || pf.steps_per_segment != sim.steps_per_segment ||
        pf.q_sampling.q != sim.q_sampling.q)
        std::cerr << "warning: " << file << " was stored with different numerical settings (n_max " << pf.n_max
                  << ", steps/segment " << pf.steps_per_segment << "); using the run configuration\n";
    return pf.protocol;
}

inline std::string protocol_digest(const ControlProtocol& p, const SimulationConfig& sim) {
    return protocol_hash(make_protocol_file(p, sim));
}

// ---- simulate ---------------------------------------------------------------------

struct Trajectory {
    std::vector<double> times;
    std::vector<std::vector<AugmentedState>> frames;  // frames[f][q]
};

inline Trajectory record_trajectory(const ControlProtocol& p, const EstimationPoint& b, const SimulationConfig& sim,
                                    int frames_per_segment) {
    if (frames_per_segment < 1 || sim.steps_per_segment % frames_per_segment != 0)
        throw ConfigError("protocol.frames_per_segment must divide physics.steps_per_segment");
    Trajectory tr;
    const auto init = initial_ensemble(b, sim);
    for (std::size_t k = 0; k < init.size(); ++k) {
        std::size_t f = 0;
        PropagationObserver obs{sim.steps_per_segment / frames_per_segment, [&](const AugmentedState& s) {
                                    if (k == 0) {
                                        tr.times.push_back(s.time);
                                        tr.frames.emplace_back();
                                    }
                                    tr.frames[f++].push_back(s);
                                }};
        propagate_augmented(init[k], b, p, sim, &obs);
    }
    return tr;
}

inline int cmd_simulate(const Json& cfg) {
    Run run("simulate", cfg);
    const auto sim = simulation_config(cfg);
    const auto b = estimation_point(cfg);
    const auto p = load_protocol(cfg, sim);
    run.manifest.protocol_hash = protocol_digest(p, sim);
    const auto tr = record_trajectory(p, b, sim, get<int>(cfg, "protocol", "frames_per_segment"));
    const auto& qs = sim.q_sampling;
    const int d = 2 * sim.n_max + 1;
    const std::size_t n_bands = std::min<std::size_t>(8, static_cast<std::size_t>(d));

    auto mom = run.open_csv("momentum.csv");
    mom << "t";
    for (int n = -sim.n_max; n <= sim.n_max; ++n) mom << ",n_" << n;
    mom << "\n";

    std::vector<BlochDecomposition> bands;
    for (const auto& s : tr.frames.front()) bands.push_back(bloch_diagonalize(b.V_L, s.basis, 0.0));
    auto bnd = run.open_csv("bands.csv");
    bnd << "t";
    for (std::size_t j = 0; j < n_bands; ++j) bnd << ",band_" << j;
    bnd << "\n";

    const int cells = get<int>(cfg, "output", "position_cells");
    const int samples = get<int>(cfg, "output", "position_samples_per_cell");
    const double sigma_p = get<double>(cfg, "output", "position_sigma_p");
    auto pos = run.open_csv("position.csv");
    pos << "t,x,density\n";

    auto fis = run.open_csv("fisher.csv");
    fis << "t,I_aa,I_VV,I_aV,F_aa,F_VV,F_aV,corr_aV,zeta_a\n";
    const double i_mzi = reference_mzi(p.total_time(), sim.scales);

    for (std::size_t f = 0; f < tr.times.size(); ++f) {
        const auto& ens = tr.frames[f];
        const double t = tr.times[f];
        mom << num(t);
        for (double x : momentum_distribution(ens, qs)) mom << "," << num(x);
        mom << "\n";

        std::vector<double> occ(n_bands, 0.0);
        for (std::size_t k = 0; k < ens.size(); ++k) {
            const auto o = bands[k].project(ens[k].psi, n_bands);
            for (std::size_t j = 0; j < n_bands; ++j) occ[j] += qs.weights[k] * o[j];
        }
        bnd << num(t);
        for (double x : occ) bnd << "," << num(x);
        bnd << "\n";

        std::vector<double> rho;
        std::vector<double> xs;
        for (std::size_t k = 0; k < ens.size(); ++k) {
            const auto pd = position_density(ens[k], sigma_p, samples, cells);
            if (rho.empty()) {
                rho.assign(pd.density.size(), 0.0);
                xs = pd.x;
            }
            for (std::size_t i = 0; i < rho.size(); ++i) rho[i] += qs.weights[k] * pd.density[i];
        }
        for (std::size_t i = 0; i < rho.size(); ++i) pos << num(t) << "," << num(xs[i]) << "," << num(rho[i]) << "\n";

        const auto fm = fisher_matrices(ens, qs);
        const auto& I = fm.cfim;
        const auto& F = fm.qfim;
        double corr = std::numeric_limits<double>::quiet_NaN();
        double zeta = std::numeric_limits<double>::quiet_NaN();
        if (I(0, 0) > 0 && I(1, 1) > 0) corr = correlation(I, 0, 1);
        try {
            zeta = marginal_information(I, param_a) / i_mzi;
        } catch (const EstimationError&) {
        }
        fis << num(t) << "," << num(I(0, 0)) << "," << num(I(1, 1)) << "," << num(I(0, 1)) << "," << num(F(0, 0))
            << "," << num(F(1, 1)) << "," << num(F(0, 1)) << "," << num(corr) << "," << num(zeta) << "\n";
    }
    run.finish();

    const auto fm = fisher_matrices(tr.frames.back(), qs);
    const auto rep = sensitivity_report(fm.cfim, i_mzi);
    std::cout << "final CFIM  I_aa " << fm.cfim(0, 0) << "  I_VV " << fm.cfim(1, 1) << "  I_aV " << fm.cfim(0, 1)
              << "\nzeta_a " << rep.zeta_a << "  corr " << rep.corr_aV << "  marginal I_V "
              << marginal_information(fm.cfim, param_V) << "\nwrote " << run.out_dir.string() << "\n";
    return 0;
}

// ---- train ------------------------------------------------------------------------

inline int cmd_train(const Json& cfg, bool quiet) {
    Run run("train", cfg);
    const auto env = environment(cfg);
    const auto h = hyperparameters(cfg);
    run.manifest.seeds = {h.seed};

    std::vector<EpisodeRecord> history;
    const auto result = train(env, h, [&](const EpisodeRecord& r) {
        history.push_back(r);
        if (!quiet && (r.episode + 1) % 100 == 0)
            std::cerr << "episode " << r.episode + 1 << "/" << h.episodes << "  epsilon " << r.epsilon << "  reward "
                      << r.reward << "\n";
    });
    const auto rs = env.resolved_rewards();
    const auto rep = sensitivity_report(result.best_cfim, rs.i_mzi_ref);
    double marg_V = std::numeric_limits<double>::quiet_NaN();
    try {
        marg_V = marginal_information(result.best_cfim, param_V);
    } catch (const EstimationError&) {
    }
    run.manifest.protocol_hash = protocol_digest(result.best_protocol, env.sim);

    auto hist = run.open_csv("history.csv");
    hist << "episode,reward,epsilon,loss,rejected,discarded\n";
    for (const auto& r : history)
        hist << r.episode << "," << num(r.reward) << "," << num(r.epsilon) << "," << num(r.loss) << ","
             << r.rejected << "," << r.discarded << "\n";

    Json meta;
    meta["reward"] = reward_name(env.reward);
    meta["episodes"] = h.episodes;
    meta["seed"] = h.seed;
    meta["best_episode"] = result.best_episode;
    meta["best_reward"] = num(result.best_reward);
    meta["admissible"] = result.best_admissible;
    meta["zeta_a"] = num(rep.zeta_a);
    meta["corr_aV"] = num(rep.corr_aV);
    meta["marginal_I_V"] = num(marg_V);
    meta["run_id"] = run.manifest.id();
    write_protocol_file(run.output_path("protocol.json").string(),
                        make_protocol_file(result.best_protocol, env.sim, nlohmann::json(meta)));
    std::ofstream(run.output_path("network.json")) << network_to_json(result.q_net).dump(1) << "\n";
    run.finish();

    std::cout << "best episode " << result.best_episode << "  reward " << result.best_reward
              << (result.best_admissible ? "" : "  (no admissible protocol found)") << "\nzeta_a " << rep.zeta_a
              << "  corr " << rep.corr_aV << "  marginal I_V " << marg_V << "\nwrote " << run.out_dir.string()
              << "\n";
    return 0;
}

// ---- bayes ------------------------------------------------------------------------

inline GridBuildOptions grid_options(const Json& cfg) {
    return GridBuildOptions{get<int>(cfg, "bayes", "workers"), get<std::string>(cfg, "bayes", "cache_dir"), true};
}

inline int cmd_bayes(const Json& cfg) {
    Run run("bayes", cfg);
    const auto sim = simulation_config(cfg);
    const auto p = load_protocol(cfg, sim);
    run.manifest.protocol_hash = protocol_digest(p, sim);
    const auto a_axis = config_axis(cfg, "bayes", "a_range", "a_points");
    const auto V_axis = config_axis(cfg, "bayes", "V_range", "V_points");
    const auto [ta, tV] = get_pair(cfg, "bayes", "truth");
    auto Ns = get<std::vector<int>>(cfg, "bayes", "N");
    const auto seeds = get<std::vector<std::uint64_t>>(cfg, "bayes", "seeds");
    if (Ns.empty() || seeds.empty()) throw ConfigError("bayes.N and bayes.seeds must be non-empty");
    std::sort(Ns.begin(), Ns.end());
    if (Ns.front() < 0) throw ConfigError("bayes.N entries must be non-negative");
    run.manifest.seeds = seeds;

    const auto grid = build_likelihood_grid(p, a_axis, V_axis, sim, grid_options(cfg));
    if (!grid.a_axis.index_of(ta) || !grid.V_axis.index_of(tV))
        throw ConfigError("bayes.truth is not a grid point");

    auto summary = run.open_csv("summary.csv");
    summary << "seed,N,mean_a,mean_V_L,sd_a,sd_V_L,corr,mle_a,mle_V_L\n";
    for (auto seed : seeds) {
        const auto record = sample_record(grid, {ta, tV}, Ns.back(), seed);
        auto post = flat_prior(grid);
        std::size_t done = 0;
        for (int N : Ns) {
            post = update_posterior(post, record, grid, done, static_cast<std::size_t>(N));
            done = static_cast<std::size_t>(N);
            std::ofstream out(run.output_path("posterior_seed" + std::to_string(seed) + "_N" + std::to_string(N) + ".csv"));
            write_posterior_csv(out, post, run.manifest.id());
            const auto m = posterior_moments(post);
            const auto best = mle(post);
            summary << seed << "," << N << "," << num(m.mean(0)) << "," << num(m.mean(1)) << ","
                    << num(std::sqrt(m.cov(0, 0))) << "," << num(std::sqrt(m.cov(1, 1))) << ","
                    << num(m.correlation()) << "," << num(best.a) << "," << num(best.V_L) << "\n";
        }
    }
    run.finish();
    std::cout << "grid " << a_axis.n << " x " << V_axis.n << " (key " << grid.key << ")\nwrote "
              << run.out_dir.string() << "\n";
    return 0;
}

// ---- jsd --------------------------------------------------------------------------

inline SliceKind parse_slice(const std::string& s) {
    if (s == "accel_pair") return SliceKind::AccelPair;
    if (s == "depth_pair") return SliceKind::DepthPair;
    if (s == "accel_depth") return SliceKind::AccelDepth;
    throw ConfigError("jsd.slice must be accel_pair, depth_pair or accel_depth");
}

inline int cmd_jsd(const Json& cfg) {
    Run run("jsd", cfg);
    const auto sim = simulation_config(cfg);
    const auto p = load_protocol(cfg, sim);
    run.manifest.protocol_hash = protocol_digest(p, sim);
    const auto slice = get<std::string>(cfg, "jsd", "slice");
    const auto kind = parse_slice(slice);
    const auto [fa, fV] = get_pair(cfg, "jsd", "fixed");
    const EstimationPoint fixed{fa, fV};
    auto a_axis = config_axis(cfg, "jsd", "a_range", "a_points");
    auto V_axis = config_axis(cfg, "jsd", "V_range", "V_points");
    // Only the slice's own axes need propagating.
    if (kind == SliceKind::AccelPair) V_axis = uniform_axis(fV, fV, 1);
    if (kind == SliceKind::DepthPair) a_axis = uniform_axis(fa, fa, 1);
    const auto grid = build_likelihood_grid(p, a_axis, V_axis, sim, grid_options(cfg));

    JsdMap map;
    try {
        map = jsd_map(grid, SliceSpec{kind, fixed});
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    {
        std::ofstream out(run.output_path("jsd_" + slice + ".csv"));
        write_jsd_csv(out, map, run.manifest.id(), run.manifest.protocol_hash);
    }

    if (kind == SliceKind::AccelDepth) {
        try {
            const auto fit = curvature_check(grid, fixed);
            auto ens = propagate_ensemble(fixed, p, sim);
            const auto I = cfim(outcome_model(ens, sim.q_sampling));
            auto f = run.open_csv("curvature.csv");
            f << "element,jsd_estimate,cfim\n";
            const char* names[3] = {"aa", "VV", "aV"};
            const int idx[3][2] = {{0, 0}, {1, 1}, {0, 1}};
            for (int e = 0; e < 3; ++e)
                f << names[e] << "," << num(fit.cfim_estimate(idx[e][0], idx[e][1])) << ","
                  << num(I(idx[e][0], idx[e][1])) << "\n";
            std::cout << "curvature fit at (" << fa << ", " << fV << "): I_aa " << fit.cfim_estimate(0, 0) << " vs "
                      << I(0, 0) << ", I_VV " << fit.cfim_estimate(1, 1) << " vs " << I(1, 1) << "\n";
        } catch (const DomainError& e) {
            std::cerr << "note: no curvature fit (" << e.what() << ")\n";
        }
    }
    if (get<bool>(cfg, "jsd", "effective_range") && kind != SliceKind::DepthPair) {
        const double a0 = phase_wrap_acceleration(p.total_time(), sim.scales);
        const auto r = effective_range(grid, fixed, a0);
        auto f = run.open_csv("effective_range.csv");
        f << "a,local_info,envelope\n";
        for (std::size_t i = 0; i < r.a.size(); ++i)
            f << num(r.a[i]) << "," << num(r.local_info[i]) << "," << num(r.envelope[i]) << "\n";
        std::cout << "phase-wrap constant a0 = " << a0 << " g; range "
                  << (r.lower ? std::to_string(*r.lower) : std::string("<edge")) << " .. "
                  << (r.upper ? std::to_string(*r.upper) : std::string(">edge")) << "\n";
    }
    run.finish();
    std::cout << "wrote " << run.out_dir.string() << "\n";
    return 0;
}

// ---- bands ------------------------------------------------------------------------

inline int cmd_bands(const Json& cfg, int n_bands, int q_points) {
    Run run("bands", cfg);
    const auto sim = simulation_config(cfg);
    const double V = get<double>(cfg, "physics", "V_L");
    if (n_bands < 1 || n_bands > 2 * sim.n_max + 1) throw ConfigError("--count outside 1..2 n_max + 1");
    if (q_points < 1) throw ConfigError("--q-points must be >= 1");
    auto f = run.open_csv("band_structure.csv");
    f << "q";
    for (int j = 0; j < n_bands; ++j) f << ",E_" << j;
    f << "\n";
    for (int i = 0; i < q_points; ++i) {
        const double q = -1.0 + 2.0 * i / q_points;
        const auto bd = bloch_diagonalize(V, build_basis(sim.n_max, q), 0.0);
        f << num(q);
        for (int j = 0; j < n_bands; ++j) f << "," << num(bd.band_energies[static_cast<std::size_t>(j)]);
        f << "\n";
    }
    run.finish();
    std::cout << "wrote " << (run.out_dir / "band_structure.csv").string() << "\n";
    return 0;
}

}  // namespace olsense::cli
