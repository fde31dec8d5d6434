#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "omcavity/run.hpp"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw omcav::ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

omcav::ExperimentConfig build_config(const std::string& config_path,
                                     const std::string& preset_name,
                                     const std::string& out_dir, unsigned seed,
                                     bool seed_set, int truncation_override) {
    omcav::ExperimentConfig cfg;
    if (!config_path.empty())
        cfg = omcav::config_from_json(read_file(config_path));
    else if (!preset_name.empty())
        cfg = omcav::preset_config(omcav::preset_from_name(preset_name));
    else
        throw omcav::ConfigError("provide --config PATH or --preset NAME");
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (seed_set) cfg.seed = seed;
    if (truncation_override > 0) cfg.truncation = truncation_override;
    return cfg;
}

void print_manifest(const omcav::RunManifest& man) {
    std::printf("preset: %s\n", man.preset.c_str());
    for (const auto& w : man.warnings)
        std::printf("warning: %s\n", w.c_str());
    for (const auto& e : man.errors)
        std::printf("recorded failure: %s\n", e.c_str());
    for (const auto& [key, value] : man.summary)
        std::printf("%s = %.12g\n", key.c_str(), value);
    if (!man.truncation.names.empty())
        std::printf("truncation scan: %s\n",
                    man.truncation.all_converged ? "converged" : "NOT converged");
    std::printf("%zu output file(s), wall time %.2f s\n", man.outputs.size(),
                man.wall_time_s);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "omcavity: pulsed-drive optomechanical protocols, closed-form and "
        "numerical propagation, phase-space analysis"};
    app.require_subcommand(1);

    std::string config_path, preset_name, out_dir, axis;
    unsigned seed = 0;
    int threads = 1, truncation_override = 0;
    std::vector<double> values;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--preset", preset_name, "preset name instead of a config file");
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        sub->add_option("--threads", threads, "worker threads for sweeps")
            ->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed,
                        "recorded in the manifest; pipelines are deterministic");
        sub->add_option("--truncation-override", truncation_override,
                        "override the closed-form Fock truncation")
            ->check(CLI::PositiveNumber);
    };

    CLI::App* cmd_run = app.add_subcommand("run", "execute one preset pipeline");
    add_common(cmd_run);

    CLI::App* cmd_sweep =
        app.add_subcommand("sweep", "run a preset once per axis value and merge");
    add_common(cmd_sweep);
    cmd_sweep->add_option("--axis", axis, "config field to sweep")->required();
    cmd_sweep->add_option("--values", values, "comma-separated axis values")
        ->required()
        ->delimiter(',');

    CLI::App* cmd_validate =
        app.add_subcommand("validate-config", "parse and validate a config file");
    cmd_validate->add_option("--config", config_path, "JSON config file")->required();

    app.add_subcommand("list-presets", "list presets and their pinned parameters");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    bool seed_set = cmd_run->count("--seed") > 0 || cmd_sweep->count("--seed") > 0;

    try {
        if (app.got_subcommand("list-presets")) {
            for (omcav::Preset p : omcav::all_presets()) {
                omcav::ExperimentConfig c = omcav::preset_config(p);
                std::printf("%-24s %s\n", omcav::preset_name(p).c_str(),
                            omcav::preset_description(p).c_str());
                std::printf("%-24s   k=%g eta=%g N=%d detuning=%d truncation=%d\n", "",
                            c.params.k, c.params.eta, c.params.N,
                            c.params.detuning == omcav::Detuning::One ? 1 : 2,
                            c.truncation);
            }
            return 0;
        }
        if (app.got_subcommand("validate-config")) {
            omcav::ExperimentConfig cfg =
                omcav::config_from_json(read_file(config_path));
            for (const auto& w : omcav::validate_config(cfg))
                std::printf("warning: %s\n", w.c_str());
            std::printf("config OK: preset %s\n",
                        omcav::preset_name(cfg.preset).c_str());
            return 0;
        }
        if (app.got_subcommand("run")) {
            omcav::ExperimentConfig cfg = build_config(
                config_path, preset_name, out_dir, seed, seed_set, truncation_override);
            print_manifest(omcav::run(cfg));
            return 0;
        }
        if (app.got_subcommand("sweep")) {
            omcav::ExperimentConfig cfg = build_config(
                config_path, preset_name, out_dir, seed, seed_set, truncation_override);
            print_manifest(omcav::sweep(cfg, axis, values, threads));
            return 0;
        }
    } catch (const omcav::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const omcav::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
