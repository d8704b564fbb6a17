#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kdbench/datasets.hpp"
#include "kdbench/losses.hpp"
#include "kdbench/models.hpp"
#include "kdbench/schedules.hpp"
#include "kdbench/teacher_pool.hpp"

namespace kdbench {

enum class OptimizerKind { SGDW, AdamW };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SGDW;
    double momentum = 0.875;  // SGDW
    double beta1 = 0.9;       // AdamW
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // decoupled: applied to weights, not gradients

    void validate() const;
};

struct SgdwState {
    std::vector<std::vector<double>> velocity;
};

struct AdamwState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long long t = 0;
};

// One update over the listed tensors. Gradients come from each tensor's grad
// buffer; an absent buffer counts as zero gradient, so weight decay still
// applies. State buffers are sized on first use and must keep matching.
void sgdw_step(const std::vector<Tensor*>& params, double lr, double momentum,
               double weight_decay, SgdwState& state);
void adamw_step(const std::vector<Tensor*>& params, double lr, double beta1, double beta2,
                double epsilon, double weight_decay, AdamwState& state);

class Optimizer {
  public:
    explicit Optimizer(OptimizerConfig config);
    void step(const std::vector<Tensor*>& params, double lr);

  private:
    OptimizerConfig config_;
    SgdwState sgdw_;
    AdamwState adamw_;
};

struct RunConfig {
    GaussianMixtureSpec dataset;
    int n_train = 0;
    int n_val = 0;
    MlpSpec model;
    OptimizerConfig optimizer;
    LrSchedule lr;
    std::optional<DistillConfig> distill;
    long long total_steps = 0;
    int batch_size = 0;
    long long eval_every = 0;
    std::uint64_t run_seed = 0;
    double teacher_cost_tau = 0.5;  // cost units per teacher forward
    double mixup_alpha = 0.0;       // 0 disables mixup

    // Also requires both schedules' total_steps to equal this run's, and
    // total_steps / eval_every >= 5 evaluation points.
    void validate() const;
};

struct MetricRow {
    long long step = 0;     // steps completed when the row was written
    long long wall_ns = 0;  // cumulative training wall time (evals excluded)
    long long teacher_forwards = 0;
    double cost_units = 0.0;  // steps + tau * teacher_forwards, cumulative
    double train_loss = 0.0;
    double ce = 0.0;
    double kd = 0.0;  // 0 on steps without an active distillation term
    double val_accuracy = 0.0;
    double lr = 0.0;

    bool operator==(const MetricRow&) const = default;
};

struct MetricTrace {
    std::vector<MetricRow> rows;
    const MetricRow& final_row() const;  // ContractError when empty
};

extern const char kMetricsHeader[];

void save_trace_csv(const std::string& path, const MetricTrace& trace);
MetricTrace load_trace_csv(const std::string& path);

struct TrainResult {
    ModelParams params;  // final, or the last evaluated snapshot when diverged
    MetricTrace trace;
    CostCounts costs;
    bool diverged = false;
    long long diverged_step = -1;
    double diverged_lr = 0.0;
};

// Runs the full loop. pool may be null when config.distill is absent.
// Divergence (non-finite loss or parameters) stops the run and fills the
// diverged fields instead of throwing.
TrainResult train_run(const RunConfig& config, const TeacherPool* pool);

// Same loop; throws DivergenceError naming the step and learning rate.
TrainResult train(const RunConfig& config, const TeacherPool* pool);

struct TeacherGridPoint {
    std::string id;
    double lr = 0.0;
    double weight_decay = 0.0;
    double mixup_alpha = 0.0;
};

struct SweepOutcome {
    TeacherGridPoint point;
    double accuracy = 0.0;  // final validation accuracy, or the last snapshot's
    bool diverged = false;
    long long diverged_step = -1;
};

struct SweepResult {
    TeacherPool pool;  // one frozen entry per grid point, diverged runs keep their snapshot
    std::vector<SweepOutcome> outcomes;
};

// The exact config a sweep trains for one grid point: seeds derive from the
// base run_seed and the point id, so adding points never disturbs others.
RunConfig teacher_run_config(const RunConfig& base, const TeacherGridPoint& point);

// Trains one teacher per grid point (no distillation), varying learning rate,
// weight decay, and mixup.
SweepResult train_teacher_sweep(const RunConfig& base, const std::vector<TeacherGridPoint>& grid);

}  // namespace kdbench
