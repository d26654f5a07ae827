// olsense: simulate, train, estimate and verify shaken-lattice sensing protocols.
//
// Exit codes: 0 success, 1 verification or run failure, 2 configuration error.

#include <unistd.h>

#include <CLI11.hpp>

#include "commands.hpp"
#include "verify.hpp"

#ifndef OLSENSE_DATA_DIR
#define OLSENSE_DATA_DIR "data"
#endif

namespace {

using namespace olsense;
using namespace olsense::cli;

struct Common {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string protocol;
};

void add_common(CLI::App* app, Common& c, bool takes_protocol) {
    app->add_option("-c,--config", c.config_file, "JSON config with physics/protocol/designer/bayes/jsd sections");
    app->add_option("-s,--set", c.overrides, "override a config value, e.g. physics.V_L=9.5")->take_all();
    app->add_option("-o,--out", c.out_dir, "output directory (output.dir)");
    if (takes_protocol) app->add_option("-p,--protocol", c.protocol, "protocol file, or 'zeros' (protocol.file)");
}

Json merged(const Common& c) {
    auto overrides = c.overrides;
    if (!c.out_dir.empty()) overrides.push_back("output.dir=" + Json(c.out_dir).dump());
    if (!c.protocol.empty()) overrides.push_back("protocol.file=" + Json(c.protocol).dump());
    return load_config(c.config_file, overrides);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Shaken optical-lattice sensing: protocol simulation, design and estimation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tool_version);

    Common sim_c, train_c, bayes_c, jsd_c, bands_c, verify_c;
    auto* simulate = app.add_subcommand("simulate", "propagate a protocol and write time series");
    add_common(simulate, sim_c, true);

    auto* train_cmd = app.add_subcommand("train", "train a protocol designer");
    add_common(train_cmd, train_c, false);
    bool quiet = false;
    train_cmd->add_flag("-q,--quiet", quiet, "no progress output");

    auto* bayes = app.add_subcommand("bayes", "simulated Bayesian estimation on a likelihood grid");
    add_common(bayes, bayes_c, true);

    auto* jsd = app.add_subcommand("jsd", "Jensen-Shannon divergence maps");
    add_common(jsd, jsd_c, true);

    auto* bands = app.add_subcommand("bands", "Bloch band energies of the static lattice");
    add_common(bands, bands_c, false);
    int n_bands = 8, q_points = 101;
    bands->add_option("--count", n_bands, "number of bands");
    bands->add_option("--q-points", q_points, "quasimomentum samples over [-1, 1)");

    auto* verify = app.add_subcommand("verify", "numerical self-checks and golden-file comparison");
    add_common(verify, verify_c, false);
    std::string data_dir = OLSENSE_DATA_DIR;
    bool regenerate = false;
    verify->add_option("--data-dir", data_dir, "directory holding protocols/ and golden/");
    verify->add_flag("--regenerate-golden", regenerate, "rewrite the golden files instead of comparing");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*simulate) return cmd_simulate(merged(sim_c));
        if (*train_cmd) return cmd_train(merged(train_c), quiet);
        if (*bayes) return cmd_bayes(merged(bayes_c));
        if (*jsd) return cmd_jsd(merged(jsd_c));
        if (*bands) return cmd_bands(merged(bands_c), n_bands, q_points);
        if (*verify) return Verifier(merged(verify_c), data_dir).run(regenerate);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
