#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "kdbench/errors.hpp"
#include "kdbench/schedules.hpp"
#include "kdbench/trainer.hpp"

using namespace kdbench;
namespace fs = std::filesystem;

namespace {

RunConfig small_run(std::uint64_t run_seed) {
    RunConfig cfg;
    cfg.dataset = random_means_spec(2, 2, 3.0, 0.5, 0.0, 31);
    cfg.n_train = 64;
    cfg.n_val = 32;
    cfg.model.input_dim = 2;
    cfg.model.hidden_widths = {8};
    cfg.model.num_classes = 2;
    cfg.model.init_seed = mix_seed(run_seed, kStreamInit);
    cfg.optimizer.kind = OptimizerKind::SGDW;
    cfg.optimizer.momentum = 0.9;
    cfg.lr.kind = LrKind::CosineAnnealing;
    cfg.lr.base_lr = 0.2;
    cfg.lr.min_lr = 0.01;
    cfg.lr.total_steps = 20;
    cfg.total_steps = 20;
    cfg.batch_size = 8;
    cfg.eval_every = 4;
    cfg.run_seed = run_seed;
    return cfg;
}

TeacherPool quick_pool(const RunConfig& base) {
    RunConfig cfg = base;
    cfg.distill.reset();
    return train_teacher_sweep(cfg, {{"t0", 0.15, 0.0, 0.0}}).pool;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
    if (a.num_layers() != b.num_layers()) return false;
    for (int l = 0; l < a.num_layers(); ++l) {
        if (a.weights[static_cast<std::size_t>(l)].data != b.weights[static_cast<std::size_t>(l)].data)
            return false;
        if (a.biases[static_cast<std::size_t>(l)].data != b.biases[static_cast<std::size_t>(l)].data)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("optimizer config validation") {
    OptimizerConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = OptimizerConfig{};
    cfg.beta2 = -0.1;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = OptimizerConfig{};
    cfg.epsilon = 0.0;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = OptimizerConfig{};
    cfg.weight_decay = -1e-4;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
}

TEST_CASE("sgdw follows the momentum recurrence exactly") {
    Tensor w({1, 2}, {1.0, -2.0});
    SgdwState state;
    const double lr = 0.1, mu = 0.8, wd = 0.01;
    const std::vector<std::vector<double>> grads = {{0.5, -1.0}, {0.25, 0.0}, {-0.5, 2.0}};

    // Independent recurrence over plain doubles.
    double v0 = 0.0, v1 = 0.0, x0 = 1.0, x1 = -2.0;
    for (const auto& g : grads) {
        w.grad = g;
        sgdw_step({&w}, lr, mu, wd, state);
        v0 = mu * v0 + g[0];
        v1 = mu * v1 + g[1];
        x0 -= lr * v0 + lr * wd * x0;
        x1 -= lr * v1 + lr * wd * x1;
        CHECK(w.data[0] == x0);
        CHECK(w.data[1] == x1);
    }
}

TEST_CASE("sgdw applies pure decay when no gradient exists") {
    Tensor w({1, 1}, {2.0});
    w.grad.clear();
    SgdwState state;
    sgdw_step({&w}, 0.5, 0.9, 0.1, state);
    CHECK(w.data[0] == 2.0 - 0.5 * 0.1 * 2.0);  // 1.9 exactly
    sgdw_step({&w}, 0.5, 0.9, 0.1, state);
    CHECK(w.data[0] == 1.9 - 0.5 * 0.1 * 1.9);
}

TEST_CASE("adamw matches the bias-corrected recurrence") {
    Tensor w({1, 1}, {0.5});
    AdamwState state;
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;

    double m = 0.0, v = 0.0, x = 0.5;
    for (int t = 1; t <= 3; ++t) {
        w.grad = {1.0};
        adamw_step({&w}, lr, b1, b2, eps, 0.0, state);
        m = b1 * m + (1.0 - b1) * 1.0;
        v = b2 * v + (1.0 - b2) * 1.0;
        const double m_hat = m / (1.0 - std::pow(b1, t));
        const double v_hat = v / (1.0 - std::pow(b2, t));
        x -= lr * (m_hat / (std::sqrt(v_hat) + eps));
        CHECK(w.data[0] == doctest::Approx(x).epsilon(1e-15));
    }
    // With a constant unit gradient the first three iterates are known.
    CHECK(std::abs(w.data[0] - 0.20000000300000068) < 1e-9);
}

TEST_CASE("adamw decays weights independently of the gradient") {
    Tensor w({1, 1}, {4.0});
    w.grad.clear();
    AdamwState state;
    adamw_step({&w}, 0.5, 0.9, 0.999, 1e-8, 0.2, state);
    CHECK(w.data[0] == 4.0 - 0.5 * 0.2 * 4.0);  // 3.6 exactly
}

TEST_CASE("adamw drives a quadratic to zero") {
    // f(w) = 0.5 ||w||^2, gradient w. Adam reaches 1e-3 within ~112 steps.
    Tensor w({1, 2}, {1.0, -0.5});
    AdamwState state;
    int first_small = -1;
    for (int t = 1; t <= 150; ++t) {
        w.grad = w.data;
        adamw_step({&w}, 0.1, 0.9, 0.999, 1e-8, 0.0, state);
        if (first_small < 0 && std::max(std::abs(w.data[0]), std::abs(w.data[1])) < 1e-3)
            first_small = t;
    }
    CHECK(first_small > 0);
    CHECK(first_small <= 120);
}

TEST_CASE("optimizer state must keep matching the parameter list") {
    Tensor a({1, 1}, {1.0});
    Tensor b({1, 1}, {2.0});
    SgdwState state;
    a.grad = {0.1};
    sgdw_step({&a}, 0.1, 0.9, 0.0, state);
    CHECK_THROWS_AS(sgdw_step({&a, &b}, 0.1, 0.9, 0.0, state), ContractError);

    AdamwState astate;
    adamw_step({&a}, 0.1, 0.9, 0.999, 1e-8, 0.0, astate);
    CHECK_THROWS_AS(adamw_step({&a, &b}, 0.1, 0.9, 0.999, 1e-8, 0.0, astate), ContractError);
}

TEST_CASE("run config validation") {
    RunConfig cfg = small_run(1);
    CHECK_NOTHROW(cfg.validate());

    RunConfig bad = cfg;
    bad.model.input_dim = 3;
    CHECK_THROWS_AS(bad.validate(), DomainError);

    bad = cfg;
    bad.model.num_classes = 3;
    CHECK_THROWS_AS(bad.validate(), DomainError);

    bad = cfg;
    bad.lr.total_steps = 21;
    CHECK_THROWS_AS(bad.validate(), DomainError);

    bad = cfg;
    bad.batch_size = 65;
    CHECK_THROWS_AS(bad.validate(), DomainError);

    bad = cfg;
    bad.eval_every = 10;  // only 2 eval points
    CHECK_THROWS_AS(bad.validate(), DomainError);

    bad = cfg;
    bad.teacher_cost_tau = -0.5;
    CHECK_THROWS_AS(bad.validate(), DomainError);

    bad = cfg;
    DistillConfig d;
    d.schedule.total_steps = 19;  // mismatch
    bad.distill = d;
    CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("metrics header is the exact contract string") {
    CHECK(std::string(kMetricsHeader) ==
          "step,wall_ns,teacher_fwds,cost_units,train_loss,ce,kd,val_acc,lr");
}

TEST_CASE("metrics csv round-trips rows exactly") {
    const fs::path dir = fs::temp_directory_path() / "kdbench_trace_test";
    fs::create_directories(dir);
    const std::string path = (dir / "metrics.csv").string();

    MetricTrace trace;
    MetricRow r;
    r.step = 10;
    r.wall_ns = 123456789;
    r.teacher_forwards = 40;
    r.cost_units = 30.0;
    r.train_loss = 1.0 / 3.0;
    r.ce = 0.25;
    r.kd = 0.1 + 0.2;
    r.val_accuracy = 0.875;
    r.lr = 1e-4;
    trace.rows.push_back(r);
    r.step = 20;
    r.kd = 0.0;
    trace.rows.push_back(r);

    save_trace_csv(path, trace);
    CHECK_FALSE(fs::exists(path + ".tmp"));
    const MetricTrace back = load_trace_csv(path);
    REQUIRE(back.rows.size() == 2u);
    CHECK(back.rows[0] == trace.rows[0]);
    CHECK(back.rows[1] == trace.rows[1]);

    // Header or column damage is refused.
    {
        std::ofstream os(path, std::ios::trunc);
        os << "step,wall_ns\n1,2\n";
    }
    CHECK_THROWS_AS(load_trace_csv(path), ConfigError);
    CHECK_THROWS_AS(load_trace_csv((dir / "missing.csv").string()), ConfigError);
    {
        std::ofstream os(path, std::ios::trunc);
        os << kMetricsHeader << "\n1,2,3\n";
    }
    CHECK_THROWS_AS(load_trace_csv(path), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("a plain run evaluates on schedule and accounts costs") {
    const RunConfig cfg = small_run(7);
    const TrainResult result = train_run(cfg, nullptr);

    CHECK_FALSE(result.diverged);
    REQUIRE(result.trace.rows.size() == 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        const MetricRow& row = result.trace.rows[i];
        CHECK(row.step == static_cast<long long>(4 * (i + 1)));
        CHECK(row.teacher_forwards == 0);
        CHECK(row.cost_units == static_cast<double>(row.step));
        CHECK(std::isfinite(row.train_loss));
        CHECK(row.ce == row.train_loss);  // no distillation term
        CHECK(row.kd == 0.0);
        CHECK(row.val_accuracy >= 0.0);
        CHECK(row.val_accuracy <= 1.0);
        CHECK(row.lr == lr_at(cfg.lr, row.step - 1));
        if (i > 0) CHECK(row.wall_ns >= result.trace.rows[i - 1].wall_ns);
    }
    CHECK(result.costs.student_forwards == 20);
    CHECK(result.costs.student_backwards == 20);
    CHECK(result.costs.teacher_forwards == 0);

    // Learning actually happened on this separable mixture.
    CHECK(result.trace.final_row().val_accuracy > 0.9);
}

TEST_CASE("a final partial interval still gets an eval row") {
    RunConfig cfg = small_run(7);
    cfg.total_steps = 22;
    cfg.lr.total_steps = 22;
    const TrainResult result = train_run(cfg, nullptr);
    REQUIRE(result.trace.rows.size() == 6u);
    CHECK(result.trace.rows[4].step == 20);
    CHECK(result.trace.final_row().step == 22);
}

TEST_CASE("training is deterministic apart from wall time") {
    const RunConfig cfg = small_run(11);
    const TrainResult a = train_run(cfg, nullptr);
    const TrainResult b = train_run(cfg, nullptr);
    CHECK(same_params(a.params, b.params));
    REQUIRE(a.trace.rows.size() == b.trace.rows.size());
    for (std::size_t i = 0; i < a.trace.rows.size(); ++i) {
        MetricRow ra = a.trace.rows[i];
        MetricRow rb = b.trace.rows[i];
        ra.wall_ns = 0;
        rb.wall_ns = 0;
        CHECK(ra == rb);
    }

    // A different run seed changes the outcome.
    const TrainResult c = train_run(small_run(12), nullptr);
    CHECK_FALSE(same_params(a.params, c.params));
}

TEST_CASE("lambda zero with a pool is bitwise identical to no distillation") {
    const RunConfig base = small_run(21);
    const TeacherPool pool = quick_pool(base);

    RunConfig distilled = base;
    DistillConfig d;
    d.lambda_kd = 0.0;
    d.loss = DistillLoss::KL;
    d.temperature = 2.0;
    d.schedule.kind = DistillKind::Always;
    d.schedule.total_steps = distilled.total_steps;
    d.strategy = TeacherStrategy::single_best();
    distilled.distill = d;

    const TrainResult plain = train_run(base, nullptr);
    const TrainResult kd = train_run(distilled, &pool);
    CHECK(same_params(plain.params, kd.params));

    // The teacher was still consulted on every active step: accounting
    // follows the schedule, not the lambda.
    CHECK(kd.costs.teacher_forwards == distilled.total_steps);
    CHECK(plain.costs.teacher_forwards == 0);
    CHECK(kd.trace.final_row().cost_units ==
          static_cast<double>(distilled.total_steps) * (1.0 + distilled.teacher_cost_tau));
}

TEST_CASE("distillation against a pool trains and charges teacher forwards") {
    const RunConfig base = small_run(33);
    const TeacherPool pool = quick_pool(base);

    RunConfig cfg = base;
    DistillConfig d;
    d.lambda_kd = 1.0;
    d.loss = DistillLoss::KL;
    d.temperature = 2.0;
    d.schedule.kind = DistillKind::FirstFraction;
    d.schedule.fraction = 0.5;
    d.schedule.total_steps = cfg.total_steps;
    d.strategy = TeacherStrategy::random_single();
    cfg.distill = d;

    const TrainResult result = train_run(cfg, &pool);
    CHECK_FALSE(result.diverged);
    CHECK(result.costs.teacher_forwards == 10);  // first half of 20 steps
    CHECK(result.trace.final_row().teacher_forwards == 10);
    CHECK(result.trace.final_row().cost_units == 20.0 + 0.5 * 10.0);

    // kd column is populated while the schedule is active, zero after.
    CHECK(result.trace.rows[0].kd != 0.0);
    CHECK(result.trace.final_row().kd == 0.0);

    // Distillation requires the pool.
    CHECK_THROWS_AS(train_run(cfg, nullptr), ContractError);
}

TEST_CASE("mse distillation runs end to end") {
    const RunConfig base = small_run(41);
    const TeacherPool pool = quick_pool(base);
    RunConfig cfg = base;
    DistillConfig d;
    d.lambda_kd = 0.5;
    d.loss = DistillLoss::MSE;
    d.schedule.kind = DistillKind::EveryK;
    d.schedule.every_k = 3;
    d.schedule.total_steps = cfg.total_steps;
    d.strategy = TeacherStrategy::single_by_id("t0");
    cfg.distill = d;
    const TrainResult result = train_run(cfg, &pool);
    CHECK_FALSE(result.diverged);
    CHECK(result.costs.teacher_forwards == 7);  // ceil(20 / 3)
}

TEST_CASE("mixup trains with soft targets") {
    RunConfig cfg = small_run(51);
    cfg.mixup_alpha = 0.4;
    const TrainResult result = train_run(cfg, nullptr);
    CHECK_FALSE(result.diverged);
    CHECK(std::isfinite(result.trace.final_row().train_loss));
    // Mixup must not reorder batches: the underlying data stream is shared.
    RunConfig plain = small_run(51);
    const TrainResult base = train_run(plain, nullptr);
    CHECK(result.trace.rows.size() == base.trace.rows.size());
}

TEST_CASE("an absurd learning rate diverges and is reported") {
    RunConfig cfg = small_run(61);
    cfg.lr.base_lr = 1e308;
    cfg.lr.min_lr = 0.0;

    const TrainResult result = train_run(cfg, nullptr);
    CHECK(result.diverged);
    CHECK(result.diverged_step >= 0);
    CHECK(result.diverged_step < cfg.total_steps);
    CHECK(result.diverged_lr > 0.0);
    // The reported parameters are the last finite snapshot.
    for (const auto& w : result.params.weights)
        for (const double v : w.data) CHECK(std::isfinite(v));
    REQUIRE_FALSE(result.trace.rows.empty());

    try {
        train(cfg, nullptr);
        FAIL("train must throw on divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.step == result.diverged_step);
        CHECK(e.lr == result.diverged_lr);
        CHECK(std::string(e.what()).find("diverged") != std::string::npos);
    }
}

TEST_CASE("teacher sweep trains one frozen entry per grid point") {
    const RunConfig base = small_run(71);
    const std::vector<TeacherGridPoint> grid = {
        {"slow", 0.05, 0.0, 0.0}, {"fast", 0.3, 1e-4, 0.0}, {"mix", 0.2, 0.0, 0.3}};
    const SweepResult sweep = train_teacher_sweep(base, grid);

    REQUIRE(sweep.pool.size() == 3);
    REQUIRE(sweep.outcomes.size() == 3u);
    CHECK_NOTHROW(sweep.pool.validate());
    for (const auto& outcome : sweep.outcomes) {
        CHECK_FALSE(outcome.diverged);
        CHECK(outcome.accuracy >= 0.0);
        CHECK(outcome.accuracy <= 1.0);
    }
    CHECK(sweep.pool.find("slow").reported_accuracy == sweep.outcomes[0].accuracy);

    // Re-running reproduces the pool bit for bit.
    const SweepResult again = train_teacher_sweep(base, grid);
    for (int i = 0; i < 3; ++i)
        CHECK(same_params(sweep.pool.teachers[static_cast<std::size_t>(i)].params,
                          again.pool.teachers[static_cast<std::size_t>(i)].params));

    // Seeds derive from the point id: order in the grid does not matter.
    const SweepResult flipped = train_teacher_sweep(base, {grid[1], grid[0], grid[2]});
    CHECK(same_params(flipped.pool.find("slow").params, sweep.pool.find("slow").params));
}

TEST_CASE("a diverged teacher stays in the pool with its snapshot") {
    const RunConfig base = small_run(81);
    const SweepResult sweep =
        train_teacher_sweep(base, {{"ok", 0.1, 0.0, 0.0}, {"boom", 1e308, 0.0, 0.0}});
    REQUIRE(sweep.outcomes.size() == 2u);
    CHECK_FALSE(sweep.outcomes[0].diverged);
    CHECK(sweep.outcomes[1].diverged);
    CHECK(sweep.outcomes[1].diverged_step >= 0);
    CHECK(sweep.pool.size() == 2);
    CHECK(sweep.pool.find("boom").params.frozen);
    for (const auto& w : sweep.pool.find("boom").params.weights)
        for (const double v : w.data) CHECK(std::isfinite(v));
}

TEST_CASE("teacher_run_config derives seeds from the point id") {
    const RunConfig base = small_run(91);
    const TeacherGridPoint p1{"alpha", 0.1, 1e-4, 0.2};
    const RunConfig c1 = teacher_run_config(base, p1);
    CHECK(c1.lr.base_lr == 0.1);
    CHECK(c1.optimizer.weight_decay == 1e-4);
    CHECK(c1.mixup_alpha == 0.2);
    CHECK(c1.run_seed == mix_seed(base.run_seed, "alpha"));
    CHECK(c1.model.init_seed == mix_seed(c1.run_seed, kStreamInit));
    CHECK_FALSE(c1.distill.has_value());

    CHECK_THROWS_AS(teacher_run_config(base, {"", 0.1, 0.0, 0.0}), DomainError);
    CHECK_THROWS_AS(teacher_run_config(base, {"x", 0.0, 0.0, 0.0}), DomainError);
    RunConfig distilling = base;
    DistillConfig d;
    d.schedule.total_steps = base.total_steps;
    distilling.distill = d;
    CHECK_THROWS_AS(teacher_run_config(distilling, p1), ContractError);
}
