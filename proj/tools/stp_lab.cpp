// Command-line front end: one subcommand per experiment kind.

#include <CLI11.hpp>

#include <iostream>

#include "stp/experiments.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Stochastic target problems: simulation, operators, PDE and tree experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    stp::RunOptions options;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    app.add_option("--config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
    app.add_option("--out", options.out_dir, "output directory (overrides [experiment] out)");
    auto* seed_opt = app.add_option("--seed", seed, "RNG seed (overrides [experiment] seed)");
    auto* workers_opt = app.add_option("--workers", workers, "worker threads (overrides [experiment] workers)")
                            ->check(CLI::PositiveNumber);
    app.add_option("--set", options.overrides, "override a config value, section.key=value (repeatable)");

    const std::map<std::string, std::string> help{
        {"validate", "spot-check the coefficient assumptions"},
        {"simulate", "Euler paths under a constant control"},
        {"operators", "evaluate the Hamiltonian operators on sampled points"},
        {"solve", "finite-difference solve of the HJB equation"},
        {"tree", "scenario-tree feasibility recursion"},
        {"certify", "certify the built-in super- and sub-solutions"},
        {"embed", "embedding equivalence on a tree and the delta degeneracy"},
        {"sweep", "sensitivity of the solved value to the control truncation radius"},
    };
    for (const auto& kind : stp::experiment_kinds()) app.add_subcommand(kind, help.at(kind));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (*seed_opt) options.seed = seed;
    if (*workers_opt) options.workers = workers;

    const std::string kind = app.get_subcommands().front()->get_name();
    stp::ConfigFile config;
    try {
        config = stp::ConfigFile::parse_file(config_path);
    } catch (const stp::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.category());
    }
    const auto result = stp::run_experiment(kind, config, options);
    for (const auto& [key, value] : result.summary) std::cout << key << " = " << value << "\n";
    if (result.exit_code != 0) std::cerr << "error: " << result.message << "\n";
    return result.exit_code;
}
