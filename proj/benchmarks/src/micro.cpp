// Microbenchmarks for the hot paths: the tape's forward+backward pass, one
// full optimizer step, teacher ensemble evaluation, per-step teacher
// selection, and the Pareto sweep.
#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "kdbench/efficiency.hpp"
#include "kdbench/losses.hpp"
#include "kdbench/models.hpp"
#include "kdbench/rng.hpp"
#include "kdbench/tape.hpp"
#include "kdbench/teacher_pool.hpp"
#include "kdbench/trainer.hpp"

namespace {

using namespace kdbench;

MlpSpec desk_spec(std::uint64_t seed) {
    MlpSpec spec;
    spec.input_dim = 16;
    spec.hidden_widths = {128, 128};
    spec.num_classes = 10;
    spec.init_seed = seed;
    return spec;
}

Tensor random_batch(int rows, int cols, std::uint64_t seed) {
    Tensor x = Tensor::zeros({rows, cols});
    Rng rng(seed);
    for (double& v : x.data) v = rng.normal();
    return x;
}

std::vector<int> random_labels(int rows, int classes, std::uint64_t seed) {
    std::vector<int> labels(static_cast<std::size_t>(rows));
    Rng rng(seed);
    for (int& label : labels) label = static_cast<int>(rng.below(classes));
    return labels;
}

void BM_ForwardBackward(benchmark::State& state) {
    const int batch = static_cast<int>(state.range(0));
    ModelParams params = init(desk_spec(1));
    const Tensor x = random_batch(batch, 16, 2);
    const std::vector<int> labels = random_labels(batch, 10, 3);
    const Tensor teacher = random_batch(batch, 10, 4);

    for (auto _ : state) {
        Tape tape;
        const Var logits = forward(tape, params, tape.constant(x));
        const Var ce = cross_entropy(tape, logits, labels);
        const Var kd = kl_distill(tape, logits, teacher, 2.0);
        const Var loss = composite(tape, ce, kd, 1.0, true);
        tape.backward(loss);
        benchmark::DoNotOptimize(tape.value(loss).data[0]);
        for (auto* t : params.trainable_tensors()) t->zero_grad();
    }
    state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ForwardBackward)->Arg(16)->Arg(64)->Arg(256);

void BM_OptimizerStep(benchmark::State& state) {
    ModelParams params = init(desk_spec(5));
    auto tensors = params.trainable_tensors();
    for (auto* t : tensors) {
        t->ensure_grad();
        for (double& g : t->grad) g = 0.001;
    }
    OptimizerConfig config;
    config.kind = state.range(0) == 0 ? OptimizerKind::SGDW : OptimizerKind::AdamW;
    config.weight_decay = 1e-4;
    Optimizer opt(config);

    for (auto _ : state) {
        opt.step(tensors, 0.01);
        benchmark::DoNotOptimize(params.weights[0].data[0]);
    }
}
BENCHMARK(BM_OptimizerStep)->Arg(0)->Arg(1);

void BM_EnsembleLogits(benchmark::State& state) {
    const int k = static_cast<int>(state.range(0));
    TeacherPool pool;
    pool.rng_seed = 7;
    std::vector<std::string> ids;
    for (int i = 0; i < k; ++i) {
        TeacherEntry entry;
        entry.id = "t" + std::to_string(i);
        entry.params = init(desk_spec(100 + static_cast<std::uint64_t>(i)));
        entry.params.frozen = true;
        entry.reported_accuracy = 0.9;
        pool.teachers.push_back(std::move(entry));
        ids.push_back("t" + std::to_string(i));
    }
    const Tensor x = random_batch(64, 16, 8);
    CostMeter meter;

    for (auto _ : state) {
        const Tensor z = ensemble_logits(pool, ids, x, meter);
        benchmark::DoNotOptimize(z.data[0]);
    }
    state.SetItemsProcessed(state.iterations() * 64 * k);
}
BENCHMARK(BM_EnsembleLogits)->Arg(1)->Arg(2)->Arg(4)->Arg(8);

void BM_StrategySelect(benchmark::State& state) {
    TeacherPool pool;
    pool.rng_seed = 9;
    for (int i = 0; i < 16; ++i) {
        TeacherEntry entry;
        entry.id = "t" + std::to_string(i);
        entry.params = init(desk_spec(200 + static_cast<std::uint64_t>(i)));
        entry.params.frozen = true;
        entry.reported_accuracy = 0.9 - 0.001 * i;
        pool.teachers.push_back(std::move(entry));
    }
    const TeacherStrategy strategy = TeacherStrategy::random_subset(4);

    long long step = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(select(strategy, pool, step++, 42));
    }
}
BENCHMARK(BM_StrategySelect);

void BM_ParetoFront(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(11);
    std::vector<ParetoPoint> points(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < points.size(); ++i)
        points[i] = ParetoPoint{rng.uniform01(), rng.uniform01(), "p" + std::to_string(i), false};

    for (auto _ : state) {
        auto flagged = pareto_front(points);
        benchmark::DoNotOptimize(flagged.data());
    }
    state.SetComplexityN(n);
}
BENCHMARK(BM_ParetoFront)->Range(1 << 8, 1 << 14)->Complexity(benchmark::oNLogN);

}  // namespace

BENCHMARK_MAIN();
