#include "spinchill/cli/runner.hpp"
#include "spinchill/errors.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv)
{
    using namespace spinchill::cli;

    CLI::App app{"Simulate and analyse delay-coupled spin-membrane cooling"};
    std::string config_path;
    std::string preset_name;
    std::string out_dir;
    std::uint64_t seed = 0;
    int threads = -1;
    bool verbose = false;
    bool list_presets = false;
    bool print_config = false;

    app.add_option("--config", config_path, "JSON run configuration or a previous manifest.json");
    app.add_option("--preset", preset_name, "run a built-in recipe (see --list-presets)");
    app.add_option("--out", out_dir, "output directory (overrides output.directory)");
    auto* seed_opt = app.add_option("--seed", seed, "override every random seed");
    app.add_option("--threads", threads, "worker threads, 0 = all cores (default: $SPINCHILL_THREADS or 0)")
        ->check(CLI::NonNegativeNumber);
    app.add_flag("-v,--verbose", verbose, "progress messages on stderr");
    app.add_flag("--list-presets", list_presets, "print the preset names and exit");
    app.add_flag("--print-config", print_config, "print the resolved configuration and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (list_presets) {
        for (const auto& name : preset_names())
            std::cout << name << '\n';
        return 0;
    }

    try {
        RunConfig config;
        if (!config_path.empty() && !preset_name.empty())
            throw spinchill::ConfigError("give either --config or --preset, not both");
        if (!config_path.empty())
            config = load_run_input(config_path);
        else if (!preset_name.empty())
            config = preset(preset_name);
        else
            throw spinchill::ConfigError("nothing to run: pass --config <file> or --preset <name>");

        if (print_config) {
            if (*seed_opt)
                config.ensemble.seed = seed;
            std::cout << serialize_config(config).dump(2) << '\n';
            return 0;
        }

        RunOptions options;
        if (!out_dir.empty())
            options.out_dir = out_dir;
        if (*seed_opt)
            options.seed = seed;
        if (threads < 0) {
            const char* env = std::getenv("SPINCHILL_THREADS");
            threads = env ? std::atoi(env) : 0;
            if (threads < 0)
                threads = 0;
        }
        options.threads = threads;
        if (verbose)
            options.log = &std::cerr;

        const auto summary = run(config, options);
        for (const auto& f : summary.files)
            std::cout << f.string() << '\n';
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "spinchill: error: " << e.what() << '\n';
        return exit_code(e);
    }
}
