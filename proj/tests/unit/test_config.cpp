#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "olsense/config.hpp"

using namespace olsense;
namespace fs = std::filesystem;

TEST(Config, DefaultsDescribeTheStandardSetup) {
    const auto cfg = load_config("", {});
    const auto sim = simulation_config(cfg);
    EXPECT_NEAR(sim.scales.accel_coupling(), rubidium_1064().accel_coupling(), 1e-9);
    EXPECT_EQ(sim.steps_per_segment, 1024);
    const auto h = hyperparameters(cfg);
    EXPECT_EQ(h.gamma, 0.99);
    EXPECT_EQ(h.tau, 0.8);
    EXPECT_EQ(h.alpha, 1e-3);
    EXPECT_EQ(h.hidden, 64);
    EXPECT_EQ(h.batch, 100);
    EXPECT_EQ(environment(cfg).n_seg, 32);
}

TEST(Config, OverridesParseAsJsonOrString) {
    auto cfg = load_config("", {"physics.V_L=9.5", "designer.reward=accel_spp", "bayes.N=[1,2]"});
    EXPECT_EQ(cfg["physics"]["V_L"], 9.5);
    EXPECT_EQ(cfg["designer"]["reward"], "accel_spp");
    EXPECT_EQ(cfg["bayes"]["N"].size(), 2u);
    EXPECT_THROW(load_config("", {"physics.nope=1"}), ConfigError);
    EXPECT_THROW(load_config("", {"nosection.V_L=1"}), ConfigError);
    EXPECT_THROW(load_config("", {"physics.V_L=deep"}), ConfigError);
    EXPECT_THROW(load_config("", {"V_L=3"}), ConfigError);
    EXPECT_THROW(environment(load_config("", {"designer.reward=magnetic"})), ConfigError);
}

TEST(Config, FileMergesOverDefaults) {
    const auto p = fs::temp_directory_path() / "olsense_cfg_test.json";
    {
        std::ofstream f(p);
        f << R"({"physics": {"n_max": 7}, "designer": {"episodes": 3}})";
    }
    const auto cfg = load_config(p.string(), {"designer.episodes=4"});
    EXPECT_EQ(cfg["physics"]["n_max"], 7);
    EXPECT_EQ(cfg["designer"]["episodes"], 4);
    EXPECT_EQ(cfg["physics"]["steps_per_segment"], 1024);
    {
        std::ofstream f(p);
        f << R"({"physics": {"n_max": 7,}})";
    }
    EXPECT_THROW(load_config(p.string(), {}), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/cfg.json", {}), ConfigError);
}

TEST(Config, RangeValidation) {
    EXPECT_THROW(simulation_config(load_config("", {"physics.n_max=0"})), ConfigError);
    EXPECT_THROW(simulation_config(load_config("", {"physics.mass_amu=-1"})), ConfigError);
    EXPECT_THROW(hyperparameters(load_config("", {"designer.gamma=1.5"})), ConfigError);
    EXPECT_THROW(hyperparameters(load_config("", {"designer.bellman=\"triple\""})), ConfigError);
    EXPECT_THROW(config_axis(load_config("", {"bayes.a_range=[1,0]"}), "bayes", "a_range", "a_points"), ConfigError);
    EXPECT_THROW(get_pair(load_config("", {"bayes.a_range=[1]"}), "bayes", "a_range"), ConfigError);
}

TEST(Config, ManifestIdIgnoresWallClock) {
    RunManifest m{"simulate", load_config("", {}), "abc", {1, 2}, {"x.csv"}, 1.0};
    const auto id = m.id();
    m.wall_seconds = 99;
    m.outputs.push_back("y.csv");
    EXPECT_EQ(m.id(), id);
    m.seeds = {1, 3};
    EXPECT_NE(m.id(), id);
    m.seeds = {1, 2};
    m.config = load_config("", {"physics.V_L=9"});
    EXPECT_NE(m.id(), id);
    const auto j = m.to_json();
    EXPECT_EQ(j["run_id"], m.id());
    EXPECT_EQ(j["physics"]["dt_over_segment"], 1.0 / 1024);
    EXPECT_EQ(config_hash(load_config("", {})), config_hash(load_config("", {})));
}
