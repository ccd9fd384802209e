#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "martnet/report.hpp"

namespace {

struct Args {
    std::string config;
    std::string output;
    std::string seed;
};

int run_mode(martnet::RunMode mode, const Args& args) {
    try {
        martnet::RunConfig cfg;
        const std::string_view builtin = martnet::find_builtin_config(args.config);
        if (!builtin.empty())
            cfg = martnet::parse_config_text(std::string(builtin));
        else
            cfg = martnet::load_config(args.config);
        cfg.mode = mode;
        if (!args.output.empty()) cfg.output_dir = args.output;
        if (!args.seed.empty()) cfg.reseed(std::stoull(args.seed));
        return martnet::run(cfg);
    } catch (const martnet::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

void add_common(CLI::App* sub, Args& args) {
    sub->add_option("--config", args.config,
                    "Run configuration: a JSON file path or a built-in benchmark name")
        ->required();
    sub->add_option("--output", args.output, "Output directory (overrides the config)");
    sub->add_option("--seed", args.seed, "Seed override");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DeepMartNet trainers and oracles"};
    app.require_subcommand(1);

    Args args;
    CLI::App* eigen = app.add_subcommand("eigen", "Train an eigenvalue/eigenfunction run");
    CLI::App* control = app.add_subcommand("control", "Train an optimal-control run");
    CLI::App* sample = app.add_subcommand("sample", "Write a path ensemble as CSV");
    CLI::App* oracle = app.add_subcommand("oracle", "Print oracle results as JSON");
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    for (CLI::App* sub : {eigen, control, sample, oracle, gradcheck}) add_common(sub, args);

    bool list = false;
    app.add_flag("--list-benchmarks", list, "List built-in benchmark names");

    CLI11_PARSE(app, argc, argv);

    if (list) {
        for (const auto name : martnet::builtin_config_names())
            std::cout << name << '\n';
        return 0;
    }
    if (eigen->parsed()) return run_mode(martnet::RunMode::kEigen, args);
    if (control->parsed()) return run_mode(martnet::RunMode::kControl, args);
    if (sample->parsed()) return run_mode(martnet::RunMode::kSample, args);
    if (oracle->parsed()) return run_mode(martnet::RunMode::kOracle, args);
    if (gradcheck->parsed()) return run_mode(martnet::RunMode::kGradCheck, args);
    return 1;
}
