#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "iocnn/experiment.hpp"

namespace {

struct VerbArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_verb(CLI::App& app, const std::string& name, const std::string& desc, VerbArgs& args,
              iocnn::ExperimentKind kind, iocnn::ExperimentKind* chosen) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", args.config_path, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", args.out_dir, "output directory")->required();
    sub->add_option("--seed", args.seed, "override the config seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
    sub->callback([kind, chosen] { *chosen = kind; });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"IOC-NN experiment harness"};
    app.require_subcommand(1);

    VerbArgs args;
    iocnn::ExperimentKind chosen = iocnn::ExperimentKind::compare;
    add_verb(app, "compare", "train unconstrained and IOC variants side by side", args,
             iocnn::ExperimentKind::compare, &chosen);
    add_verb(app, "sweep", "label-noise sweep with peak and convergence reports", args,
             iocnn::ExperimentKind::noise_sweep, &chosen);
    add_verb(app, "moe", "mixture-of-experts ensemble (EM trained gate)", args,
             iocnn::ExperimentKind::moe, &chosen);
    add_verb(app, "boost", "boosted ensemble with a trained gate", args,
             iocnn::ExperimentKind::boost, &chosen);
    add_verb(app, "verify", "convexity certification of a model", args,
             iocnn::ExperimentKind::verify, &chosen);
    add_verb(app, "calibrate", "reliability bins and expected calibration error", args,
             iocnn::ExperimentKind::calibrate, &chosen);

    CLI11_PARSE(app, argc, argv);

    try {
        iocnn::ExperimentConfig config = iocnn::load_config(args.config_path);
        if (config.kind != chosen) {
            std::cerr << "error: config kind '" << iocnn::experiment_kind_name(config.kind)
                      << "' does not match the '" << iocnn::experiment_kind_name(chosen)
                      << "' subcommand\n";
            return 2;
        }
        if (args.seed_set) config.seed = args.seed;
        return iocnn::run_experiment(config, args.config_path, args.out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
