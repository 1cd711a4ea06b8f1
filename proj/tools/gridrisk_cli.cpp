// Command line front end for the screening pipeline. Each verb is one stage
// against an output directory; `run` executes the whole study in order.
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gridrisk/pipeline.hpp"

namespace {

struct StageArgs {
    std::string config;
    std::string out;
};

void add_common(CLI::App* cmd, StageArgs& args) {
    cmd->add_option("--config", args.config, "run configuration (json)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", args.out, "output directory")->required();
}

gridrisk::Pipeline make_pipeline(const StageArgs& args) {
    return {gridrisk::load_run_config(args.config), args.out};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"exact contingency analysis with a guided-dropout surrogate"};
    app.require_subcommand(1);

    StageArgs args;
    std::string oracle_set = "train";
    std::string oracle_tier = "both";

    CLI::App* generate = app.add_subcommand("generate", "sample the operating states");
    add_common(generate, args);
    CLI::App* oracle = app.add_subcommand("oracle", "solve contingencies with the exact solver");
    add_common(oracle, args);
    oracle->add_option("--set", oracle_set, "state set: train, calibration, or test")
        ->check(CLI::IsMember({"train", "calibration", "test"}));
    oracle->add_option("--tier", oracle_tier, "contingency tier: n1, n2, or both")
        ->check(CLI::IsMember({"n1", "n2", "both"}));
    CLI::App* train = app.add_subcommand("train", "fit the flow surrogate");
    add_common(train, args);
    CLI::App* calibrate =
        app.add_subcommand("calibrate", "set thermal limits and score calibration");
    add_common(calibrate, args);
    CLI::App* evaluate = app.add_subcommand("evaluate", "rank, estimate risk, and measure");
    add_common(evaluate, args);
    CLI::App* report = app.add_subcommand("report", "render the run report");
    add_common(report, args);
    CLI::App* run = app.add_subcommand("run", "all stages in order");
    add_common(run, args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);  // prints help or the usage error
        return code == 0 ? 0 : 1;
    }

    try {
        gridrisk::Pipeline pipeline = make_pipeline(args);
        if (generate->parsed()) pipeline.generate();
        if (oracle->parsed()) pipeline.oracle(oracle_set, oracle_tier);
        if (train->parsed()) pipeline.train();
        if (calibrate->parsed()) pipeline.calibrate();
        if (evaluate->parsed()) pipeline.evaluate();
        if (report->parsed()) pipeline.report();
        if (run->parsed()) pipeline.run_all();
        return 0;
    } catch (const gridrisk::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const gridrisk::SemanticError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const gridrisk::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const gridrisk::SolverError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const gridrisk::TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const gridrisk::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
