// cmbec: scenario runner for the measured-BEC lattice simulator.
//
// Subcommands select the solver tier; every run reads an optional JSON config
// (flags override file values), writes figure-ready CSV files plus a manifest
// into --out-dir, and is exactly reproducible from (config, seed, threads).
//
// Exit codes: 0 success, 2 bad config, 3 trajectory divergence, 4 oracle
// mismatch in oracle-check mode, 1 anything else.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cmbec/scenario.hpp"

int main(int argc, char** argv) {
    CLI::App app{"quantum dynamics of a trapped 1D Bose gas under collective position measurement"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> out_dir;
    std::optional<long> trajectories;
    std::optional<double> dt;
    std::optional<double> t_final;
    bool resume = false;

    for (const char* name : {"gpe", "meanfield", "positivep", "compare", "oracle-check"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON scenario file");
        sub->add_option("--seed", seed, "master RNG seed");
        sub->add_option("--threads", threads, "worker threads (0 = hardware)");
        sub->add_option("--out-dir", out_dir, "output directory");
        sub->add_option("--trajectories", trajectories, "stochastic trajectory count");
        sub->add_option("--dt", dt, "integrator time step");
        sub->add_option("--t-final", t_final, "evolution horizon");
        if (std::string(name) == "positivep")
            sub->add_flag("--resume", resume, "continue from out-dir/checkpoint.bin");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        cmbec::Scenario s;
        if (!config_path.empty()) s = cmbec::parse_scenario_file(config_path);
        s.mode = cmbec::parse_mode(app.get_subcommands().front()->get_name());
        if (seed) s.sim.seed = *seed;
        if (threads) s.threads = *threads;
        if (out_dir) s.out_dir = *out_dir;
        if (trajectories) {
            s.sim.n_trajectories = *trajectories;
            s.trajectories_explicit = true;
        }
        if (dt) s.sim.dt = *dt;
        if (t_final) s.sim.t_final = *t_final;
        if (resume) s.resume = true;

        cmbec::run_scenario(s);
        return 0;
    } catch (const cmbec::ScenarioError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const cmbec::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const cmbec::OracleMismatch& e) {
        std::cerr << "oracle mismatch: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
