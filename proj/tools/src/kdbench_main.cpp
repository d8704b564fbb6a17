// kdbench: train teacher pools, distill students, and report the
// quality-per-resource tradeoffs between the two.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "kdbench/errors.hpp"
#include "kdbench/gradcheck.hpp"
#include "kdbench/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

struct CommonArgs {
    std::string config;
    std::string out;
    int jobs = 1;
    int seed_offset = 0;
    std::string resource = "cost";
};

void attach_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "experiment plan file")->required();
    cmd->add_option("--out", args.out, "output directory (default: the plan's 'out')");
    cmd->add_option("--jobs", args.jobs, "worker threads for run-level parallelism")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--seed-offset", args.seed_offset, "shift the block of seed indices")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--resource", args.resource, "headline resource axis")
        ->check(CLI::IsMember({"wall", "cost"}));
}

int run_plan_command(const std::string& name, const CommonArgs& args) {
    const kdbench::ExperimentPlan plan = kdbench::load_plan(args.config);
    kdbench::CommandOptions options;
    options.out = args.out.empty() ? plan.default_out : args.out;
    options.jobs = args.jobs;
    options.seed_offset = args.seed_offset;
    options.axis =
        args.resource == "wall" ? kdbench::ResourceAxis::Wall : kdbench::ResourceAxis::Cost;

    kdbench::CommandOutcome outcome;
    if (name == "sweep")
        outcome = kdbench::cmd_sweep(plan, options);
    else if (name == "distill")
        outcome = kdbench::cmd_distill(plan, options);
    else if (name == "report")
        outcome = kdbench::cmd_report(plan, options);
    else
        outcome = kdbench::cmd_pareto(plan, options);

    for (const auto& err : outcome.errors) std::fprintf(stderr, "%s\n", err.c_str());
    std::printf("%s: %d done, %d skipped, %d failed (out: %s)\n", name.c_str(),
                outcome.succeeded, outcome.skipped, outcome.failed, options.out.c_str());
    return outcome.ok() ? kExitOk : kExitPartial;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowledge-distillation training efficiency bench"};
    app.require_subcommand(1);

    CommonArgs args;
    CLI::App* sweep = app.add_subcommand("sweep", "train the teacher grid into a registry");
    CLI::App* distill = app.add_subcommand("distill", "run every variant/duration/seed cell");
    CLI::App* report = app.add_subcommand("report", "aggregate runs into speedup/pareto reports");
    CLI::App* pareto = app.add_subcommand("pareto", "emit just the pareto front");
    for (CLI::App* cmd : {sweep, distill, report, pareto}) attach_common(cmd, args);

    int graphs = 100;
    std::uint64_t gseed = 7;
    double tol = 1e-4;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of the reverse pass");
    gradcheck->add_option("--graphs", graphs, "number of randomized graphs")
        ->check(CLI::PositiveNumber);
    gradcheck->add_option("--seed", gseed, "suite seed");
    gradcheck->add_option("--tol", tol, "relative error tolerance")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gradcheck->parsed()) {
            const auto suite = kdbench::run_gradcheck_suite(graphs, gseed, 1e-5, tol);
            std::printf("gradcheck: %d graphs, %d failures, max rel err %.3g (worst: %s): %s\n",
                        suite.graphs, suite.failures, suite.max_rel_err,
                        suite.worst.empty() ? "none" : suite.worst.c_str(),
                        suite.passed ? "PASS" : "FAIL");
            return suite.passed ? kExitOk : kExitPartial;
        }
        for (CLI::App* cmd : {sweep, distill, report, pareto})
            if (cmd->parsed()) return run_plan_command(cmd->get_name(), args);
        return kExitUsage;
    } catch (const kdbench::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitPartial;
    }
}
