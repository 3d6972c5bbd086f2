#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bikt/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Regression/detection bi-knowledge transfer for unsupervised crowd counting"};
    app.require_subcommand(1);

    std::string config_path;
    bikt::ConfigOverrides overrides;
    std::uint64_t seed = 0;
    std::string out, device;
    int cycles = 0;
    double fraction = 1.0;
    bool strict = false;

    for (const auto& name : bikt::command_names()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON run configuration");
        sub->add_option("--seed", seed, "global seed");
        sub->add_option("--out", out, "run directory (default: $BIKT_OUT or ./runs)");
        sub->add_option("--cycles", cycles, "transfer cycles")->check(CLI::PositiveNumber);
        sub->add_option("--source-fraction", fraction, "share of source scenes used by train-phi")
            ->check(CLI::Range(0.0, 1.0));
        sub->add_option("--device", device, "compute device (cpu)");
        sub->add_flag("--strict", strict, "abort on malformed annotation records");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    const CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--seed")) overrides.seed = seed;
    if (sub->count("--out")) overrides.out = out;
    if (sub->count("--cycles")) overrides.cycles = cycles;
    if (sub->count("--source-fraction")) overrides.source_fraction = fraction;
    if (sub->count("--device")) overrides.device = device;
    if (sub->count("--strict")) overrides.strict = strict;

    bikt::RunConfig config;
    try {
        config = bikt::parse_config(config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path),
                                    overrides);
    } catch (const bikt::ConfigError& e) {
        std::cerr << nlohmann::json{{"error", "config"}, {"key", e.key()}, {"message", e.what()}}.dump() << '\n';
        return 2;
    }
    return bikt::run_command(sub->get_name(), config, std::cout, std::cerr);
}
