#include "dpad/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char ** argv) {
    CLI::App app{"dpad: suffix-dropout inference engine for masked diffusion language models"};
    app.require_subcommand(1);

    dpad::CliOptions options;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::string preset_key;

    struct Sub {
        const char * name;
        const char * help;
        dpad::Command command;
    };
    const Sub subs[] = {
        {"decode", "Run one decode and write tokens plus the step trace", dpad::Command::decode},
        {"compare", "Decode under two policies and report the first divergence", dpad::Command::compare},
        {"analyze", "Write attention distance profiles and the spike-prune experiment", dpad::Command::analyze},
        {"sampler-check", "Monte Carlo check of the suffix sampler", dpad::Command::sampler_check},
        {"cost", "Suffix attention cost prediction, sweep, or trace reconciliation", dpad::Command::cost},
    };
    std::vector<std::pair<CLI::App *, dpad::Command>> registered;
    for (const auto & s : subs) {
        CLI::App * sub = app.add_subcommand(s.name, s.help);
        sub->add_option("--config", options.config, "Run configuration (JSON)")->required();
        sub->add_option("--out", out_dir, "Output directory (overrides out_dir)");
        sub->add_option("--seed", seed, "Run seed (overrides seed)");
        sub->add_option("--preset", preset_key, "Dropout preset, e.g. LLaDA-Instruct/GSM8K");
        registered.emplace_back(sub, s.command);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : dpad::kExitConfig;
    }

    for (const auto & [sub, command] : registered) {
        if (!sub->parsed()) {
            continue;
        }
        if (sub->count("--out") > 0) {
            options.out_dir = out_dir;
        }
        if (sub->count("--seed") > 0) {
            options.seed = seed;
        }
        if (sub->count("--preset") > 0) {
            options.preset = preset_key;
        }
        return dpad::run_command(command, options, std::cout, std::cerr);
    }
    return dpad::kExitConfig;
}
