#include "mwt/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Selective fine-tuning laboratory: pretrain, fine-tune, sweep, "
                 "benchmark, and analyze a miniature transformer encoder."};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::int64_t seed = -1;
    int jobs = 1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run config file (key=value lines)")->required();
        cmd->add_option("--out", out_dir, "output directory (overrides io.out_dir)");
        cmd->add_option("--seed", seed, "override train.seeds with a single seed");
        cmd->add_option("--jobs", jobs, "max parallel runs (currently executed sequentially)");
    };

    auto* pretrain = app.add_subcommand("pretrain", "train the MLM source model, write checkpoint");
    auto* finetune = app.add_subcommand("finetune", "fine-tune a regime at a fixed learning rate");
    auto* sweep = app.add_subcommand("sweep", "learning-rate sweep across seeds for one regime");
    auto* benchmark = app.add_subcommand("benchmark", "full regime battery with the comparison table");
    auto* analyze = app.add_subcommand("analyze", "weight-distribution, outlier, and ratio reports");
    for (auto* cmd : {pretrain, finetune, sweep, benchmark, analyze}) add_common(cmd);

    CLI11_PARSE(app, argc, argv);

    try {
        const mwt::RunConfig cfg = mwt::RunConfig::parse_file(config_path);
        mwt::CommandOptions opt;
        opt.out_dir = out_dir;
        if (seed >= 0) opt.seed = static_cast<std::uint64_t>(seed);
        opt.jobs = jobs;

        if (pretrain->parsed()) return mwt::cmd_pretrain(cfg, opt);
        if (finetune->parsed()) return mwt::cmd_finetune(cfg, opt);
        if (sweep->parsed()) return mwt::cmd_sweep(cfg, opt);
        if (benchmark->parsed()) return mwt::cmd_benchmark(cfg, opt);
        if (analyze->parsed()) return mwt::cmd_analyze(cfg, opt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
