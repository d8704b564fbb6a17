#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kdbench/efficiency.hpp"
#include "kdbench/kvfile.hpp"
#include "kdbench/trainer.hpp"

namespace kdbench {

// One experiment variant: a training recipe to run at one or more durations
// (fractions of the plan's total_steps). A variant without a distillation
// config is a plain run; the implicit "baseline" variant is one of those.
struct VariantSpec {
    std::string name;
    std::optional<DistillConfig> distill;  // schedule totals are filled per duration
    std::vector<double> durations = {1.0};
};

struct ExperimentPlan {
    std::string name;
    std::string default_out = "runs";

    GaussianMixtureSpec dataset;
    int n_train = 0;
    int n_val = 0;
    long long bayes_mc = 100000;  // 0 skips the ceiling estimate in reports

    MlpSpec model;  // init_seed is derived per run
    OptimizerConfig optimizer;
    LrSchedule lr;  // total_steps is filled per run

    long long total_steps = 0;
    int batch_size = 0;
    long long eval_every = 0;
    double teacher_cost_tau = 0.5;

    int seeds = 1;
    std::uint64_t base_seed = 0;

    std::vector<TeacherGridPoint> teacher_grid;
    std::vector<VariantSpec> variants;  // baseline prepended when absent

    void validate() const;
};

ExperimentPlan parse_plan(const KvFile& file);
ExperimentPlan load_plan(const std::string& path);
KvFile serialize_plan(const ExperimentPlan& plan);

// Strategy and schedule notation used in plan files and manifests:
//   single_best | by_id:<id> | greedy:<k> | random_subset:<k> | random_single
//   always | first_fraction:<rho> | every_k:<k>
TeacherStrategy parse_strategy(const std::string& text);
std::string strategy_text(const TeacherStrategy& strategy);
DistillSchedule parse_distill_schedule(const std::string& text);  // total_steps left at 0
std::string distill_schedule_text(const DistillSchedule& schedule);

// Deterministic run identity. Seed indices shift by seed_offset, so re-running
// with a new offset adds fresh seeds without touching existing directories.
std::string run_id(const std::string& variant, double duration, int seed_index);
std::uint64_t seed_for_index(const ExperimentPlan& plan, int seed_index);

// Fully resolved config for one (variant, duration, seed) cell. Variants at
// the same seed index share init and batch streams, so comparisons against
// the baseline are paired.
RunConfig resolve_run(const ExperimentPlan& plan, const VariantSpec& variant, double duration,
                      int seed_index);

// Canonical text of a resolved config; its hash keys idempotent re-runs.
std::string canonical_config(const RunConfig& config);
std::string config_hash(const RunConfig& config);

struct CommandOptions {
    std::string out;
    int jobs = 1;
    int seed_offset = 0;
    ResourceAxis axis = ResourceAxis::Cost;
};

struct CommandOutcome {
    int attempted = 0;
    int succeeded = 0;
    int skipped = 0;  // already up to date
    int failed = 0;
    std::vector<std::string> errors;

    bool ok() const { return failed == 0; }
};

// Trains the teacher grid into <out>/registry (checkpoints + manifest.kv).
// Diverged teachers keep their last snapshot and are marked in the manifest.
// Entries whose config hash already matches on disk are skipped.
CommandOutcome cmd_sweep(const ExperimentPlan& plan, const CommandOptions& options);

// Runs every (variant, duration, seed) cell against the sweep's registry into
// <out>/runs/<run_id>/ (metrics.csv + manifest.kv + model.ckpt). A variant
// that references a missing teacher fails alone; other cells still run.
CommandOutcome cmd_distill(const ExperimentPlan& plan, const CommandOptions& options);

/// Aggregates finished runs into <out>/reports: speedup and pareto CSVs for
// both resource axes, teacher_student.csv (when by-id runs exist), and
// summary.kv whose headline axis follows options.axis.
CommandOutcome cmd_report(const ExperimentPlan& plan, const CommandOptions& options);

// Just the Pareto front of finished runs on the chosen axis.
CommandOutcome cmd_pareto(const ExperimentPlan& plan, const CommandOptions& options);

}  // namespace kdbench
