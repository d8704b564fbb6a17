#include "kdbench/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kdbench/errors.hpp"
#include "kdbench/kvfile.hpp"
#include "kdbench/rng.hpp"

namespace kdbench {

void OptimizerConfig::validate() const {
    if (momentum < 0.0 || momentum >= 1.0) throw DomainError("momentum must lie in [0, 1)");
    if (beta1 < 0.0 || beta1 >= 1.0) throw DomainError("beta1 must lie in [0, 1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw DomainError("beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw DomainError("epsilon must be > 0");
    if (weight_decay < 0.0) throw DomainError("weight_decay must be >= 0");
}

namespace {

void check_state(std::vector<std::vector<double>>& buffers, const std::vector<Tensor*>& params) {
    if (buffers.empty()) {
        buffers.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            buffers[i].assign(params[i]->data.size(), 0.0);
        return;
    }
    if (buffers.size() != params.size())
        throw ContractError("optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (buffers[i].size() != params[i]->data.size())
            throw ContractError("optimizer state does not match a parameter shape");
}

double grad_at(const Tensor& t, std::size_t i) { return t.grad.empty() ? 0.0 : t.grad[i]; }

}  // namespace

void sgdw_step(const std::vector<Tensor*>& params, double lr, double momentum,
               double weight_decay, SgdwState& state) {
    check_state(state.velocity, params);
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p];
        auto& vel = state.velocity[p];
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            vel[i] = momentum * vel[i] + grad_at(t, i);
            t.data[i] -= lr * vel[i] + lr * weight_decay * t.data[i];
        }
    }
}

void adamw_step(const std::vector<Tensor*>& params, double lr, double beta1, double beta2,
                double epsilon, double weight_decay, AdamwState& state) {
    check_state(state.m, params);
    check_state(state.v, params);
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p];
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            const double g = grad_at(t, i);
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            t.data[i] -= lr * (m_hat / (std::sqrt(v_hat) + epsilon) + weight_decay * t.data[i]);
        }
    }
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::step(const std::vector<Tensor*>& params, double lr) {
    switch (config_.kind) {
        case OptimizerKind::SGDW:
            sgdw_step(params, lr, config_.momentum, config_.weight_decay, sgdw_);
            return;
        case OptimizerKind::AdamW:
            adamw_step(params, lr, config_.beta1, config_.beta2, config_.epsilon,
                       config_.weight_decay, adamw_);
            return;
    }
    throw ContractError("unknown optimizer kind");
}

void RunConfig::validate() const {
    dataset.validate();
    if (n_train < 1 || n_val < 1) throw DomainError("split sizes must be >= 1");
    model.validate();
    if (model.input_dim != dataset.dim) throw DomainError("model input_dim must match dataset dim");
    if (model.num_classes != dataset.num_classes)
        throw DomainError("model num_classes must match the dataset");
    optimizer.validate();
    lr.validate();
    if (total_steps < 1) throw DomainError("total_steps must be >= 1");
    if (lr.total_steps != total_steps)
        throw DomainError("lr schedule total_steps must equal the run's total_steps");
    if (batch_size < 1 || batch_size > n_train)
        throw DomainError("batch_size must lie in [1, n_train]");
    if (eval_every < 1) throw DomainError("eval_every must be >= 1");
    if (total_steps / eval_every < 5)
        throw DomainError("eval_every must yield at least 5 evaluation points");
    if (distill) {
        distill->validate();
        if (distill->schedule.total_steps != total_steps)
            throw DomainError("distillation schedule total_steps must equal the run's total_steps");
    }
    if (!(teacher_cost_tau >= 0.0)) throw DomainError("teacher_cost_tau must be >= 0");
    if (mixup_alpha < 0.0) throw DomainError("mixup_alpha must be >= 0");
}

const MetricRow& MetricTrace::final_row() const {
    if (rows.empty()) throw ContractError("trace has no rows");
    return rows.back();
}

const char kMetricsHeader[] = "step,wall_ns,teacher_fwds,cost_units,train_loss,ce,kd,val_acc,lr";

void save_trace_csv(const std::string& path, const MetricTrace& trace) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw ConfigError("cannot open for writing: " + tmp.string());
        os << kMetricsHeader << '\n';
        for (const auto& r : trace.rows) {
            os << r.step << ',' << r.wall_ns << ',' << r.teacher_forwards << ','
               << format_double(r.cost_units) << ',' << format_double(r.train_loss) << ','
               << format_double(r.ce) << ',' << format_double(r.kd) << ','
               << format_double(r.val_accuracy) << ',' << format_double(r.lr) << '\n';
        }
        if (!os) throw ConfigError("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

MetricTrace load_trace_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw ConfigError(path + ": empty metrics file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kMetricsHeader) throw ConfigError(path + ": unexpected metrics header", 1);
    MetricTrace trace;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 9) throw ConfigError(path + ": expected 9 columns", line_no);
        try {
            MetricRow r;
            r.step = std::stoll(cells[0]);
            r.wall_ns = std::stoll(cells[1]);
            r.teacher_forwards = std::stoll(cells[2]);
            r.cost_units = std::stod(cells[3]);
            r.train_loss = std::stod(cells[4]);
            r.ce = std::stod(cells[5]);
            r.kd = std::stod(cells[6]);
            r.val_accuracy = std::stod(cells[7]);
            r.lr = std::stod(cells[8]);
            trace.rows.push_back(r);
        } catch (const std::exception&) {
            throw ConfigError(path + ": unparseable metrics row", line_no);
        }
    }
    return trace;
}

namespace {

Tensor onehot_rows(const std::vector<int>& labels, int classes) {
    Tensor t = Tensor::zeros({static_cast<int>(labels.size()), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) t.at(static_cast<int>(i), labels[i]) = 1.0;
    return t;
}

bool params_finite(const ModelParams& params) {
    for (const auto& w : params.weights)
        if (!w.all_finite()) return false;
    for (const auto& b : params.biases)
        if (!b.all_finite()) return false;
    return true;
}

}  // namespace

TrainResult train_run(const RunConfig& config, const TeacherPool* pool) {
    config.validate();
    if (config.distill && !pool) throw ContractError("distillation config given without a teacher pool");
    if (config.distill) {
        pool->validate();
        config.distill->strategy.validate(*pool);
        if (pool->teachers.front().params.spec.input_dim != config.dataset.dim)
            throw DomainError("teacher input_dim must match the dataset");
    }

    const Dataset data = generate(config.dataset, config.n_train, config.n_val);
    ModelParams params = init(config.model);
    Optimizer opt(config.optimizer);
    auto trainable = params.trainable_tensors();

    // Separate streams per concern: toggling distillation or mixup must not
    // disturb the batch order, and vice versa.
    const std::uint64_t batch_seed = mix_seed(config.run_seed, kStreamBatch);
    const std::uint64_t teacher_seed =
        pool ? mix_seed(pool->rng_seed, mix_seed(config.run_seed, kStreamTeacher)) : 0;
    Rng mixup_rng(mix_seed(config.run_seed, kStreamAugment));

    TrainResult result;
    CostMeter meter;
    ModelParams snapshot = params;

    long long epoch = 0;
    BatchStream stream(data.train, config.batch_size, epoch_seed(batch_seed, epoch));
    long long steps_done = 0;
    double last_lr = 0.0;

    const auto eval_into = [&](long long completed, double loss, double ce_v, double kd_v) {
        const auto counts = meter.counts();
        MetricRow row;
        row.step = completed;
        row.wall_ns = counts.wall_clock_ns;
        row.teacher_forwards = counts.teacher_forwards;
        row.cost_units = static_cast<double>(completed) +
                         config.teacher_cost_tau * static_cast<double>(counts.teacher_forwards);
        row.train_loss = loss;
        row.ce = ce_v;
        row.kd = kd_v;
        row.val_accuracy = accuracy(params, data.val);
        row.lr = last_lr;
        result.trace.rows.push_back(row);
        snapshot = params;
    };

    double loss_v = 0.0, ce_v = 0.0, kd_v = 0.0;
    for (long long step = 0; step < config.total_steps; ++step) {
        auto maybe_batch = stream.next();
        if (!maybe_batch) {
            ++epoch;
            stream = BatchStream(data.train, config.batch_size, epoch_seed(batch_seed, epoch));
            maybe_batch = stream.next();
        }
        Batch batch = std::move(*maybe_batch);
        last_lr = lr_at(config.lr, step);

        const auto t0 = std::chrono::steady_clock::now();
        bool step_diverged = false;
        try {
            Tensor targets;  // soft labels when mixup is on
            if (config.mixup_alpha > 0.0) {
                const double m = mixup_rng.beta(config.mixup_alpha, config.mixup_alpha);
                const auto perm = mixup_rng.permutation(static_cast<int>(batch.labels.size()));
                const Tensor hard = onehot_rows(batch.labels, config.model.num_classes);
                Tensor mixed = batch.features;
                targets = hard;
                for (int i = 0; i < mixed.rows(); ++i) {
                    const int j = perm[static_cast<std::size_t>(i)];
                    for (int d = 0; d < mixed.cols(); ++d)
                        mixed.at(i, d) = m * batch.features.at(i, d) + (1.0 - m) * batch.features.at(j, d);
                    for (int c = 0; c < targets.cols(); ++c)
                        targets.at(i, c) = m * hard.at(i, c) + (1.0 - m) * hard.at(j, c);
                }
                batch.features = std::move(mixed);
            }

            Tape tape;
            const Var x = tape.constant(batch.features);
            const Var logits = forward(tape, params, x);
            meter.add_student_forward();

            const Var ce = config.mixup_alpha > 0.0
                               ? soft_cross_entropy(tape, logits, targets)
                               : cross_entropy(tape, logits, batch.labels);

            std::optional<Var> kd;
            bool active = false;
            if (config.distill) {
                active = distill_active(config.distill->schedule, step);
                if (active) {
                    const auto ids = select(config.distill->strategy, *pool, step, teacher_seed);
                    const Tensor t_logits = ensemble_logits(*pool, ids, batch.features, meter);
                    kd = config.distill->loss == DistillLoss::KL
                             ? kl_distill(tape, logits, t_logits, config.distill->temperature)
                             : mse_distill(tape, logits, t_logits);
                }
            }
            const double lambda = config.distill ? config.distill->lambda_kd : 0.0;
            const Var loss = composite(tape, ce, kd, lambda, active);

            loss_v = tape.value(loss).data[0];
            ce_v = tape.value(ce).data[0];
            kd_v = kd ? tape.value(*kd).data[0] : 0.0;
            if (!std::isfinite(loss_v)) {
                step_diverged = true;
            } else {
                for (Tensor* t : trainable) t->zero_grad();
                tape.backward(loss);
                meter.add_student_backward();
                opt.step(trainable, last_lr);
                if (!params_finite(params)) step_diverged = true;
            }
        } catch (const NumericError&) {
            step_diverged = true;
        }
        const auto t1 = std::chrono::steady_clock::now();
        meter.add_wall_ns(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());

        if (step_diverged) {
            result.diverged = true;
            result.diverged_step = step;
            result.diverged_lr = last_lr;
            break;
        }
        steps_done = step + 1;
        if (steps_done % config.eval_every == 0) eval_into(steps_done, loss_v, ce_v, kd_v);
    }

    if (!result.diverged && steps_done % config.eval_every != 0)
        eval_into(steps_done, loss_v, ce_v, kd_v);
    if (result.diverged && result.trace.rows.empty()) {
        // No finite evaluation happened; report the initial parameters.
        snapshot = init(config.model);
        MetricRow row;
        row.step = 0;
        row.val_accuracy = accuracy(snapshot, data.val);
        row.lr = last_lr;
        result.trace.rows.push_back(row);
    }

    result.params = result.diverged ? snapshot : params;
    result.costs = meter.counts();
    return result;
}

TrainResult train(const RunConfig& config, const TeacherPool* pool) {
    TrainResult result = train_run(config, pool);
    if (result.diverged)
        throw DivergenceError("training diverged at step " + std::to_string(result.diverged_step) +
                                  " (lr=" + format_double(result.diverged_lr) + ")",
                              result.diverged_step, result.diverged_lr);
    return result;
}

RunConfig teacher_run_config(const RunConfig& base, const TeacherGridPoint& point) {
    if (base.distill) throw ContractError("teacher sweep runs must not distill");
    if (point.id.empty()) throw DomainError("grid point needs an id");
    if (!(point.lr > 0.0)) throw DomainError("grid point lr must be > 0");
    if (point.weight_decay < 0.0) throw DomainError("grid point weight_decay must be >= 0");
    if (point.mixup_alpha < 0.0) throw DomainError("grid point mixup_alpha must be >= 0");
    RunConfig config = base;
    config.lr.base_lr = point.lr;
    config.optimizer.weight_decay = point.weight_decay;
    config.mixup_alpha = point.mixup_alpha;
    config.run_seed = mix_seed(base.run_seed, point.id);
    config.model.init_seed = mix_seed(config.run_seed, kStreamInit);
    return config;
}

SweepResult train_teacher_sweep(const RunConfig& base, const std::vector<TeacherGridPoint>& grid) {
    if (grid.empty()) throw DomainError("teacher grid must not be empty");
    SweepResult result;
    result.pool.rng_seed = mix_seed(base.run_seed, "pool");
    for (const auto& point : grid) {
        const RunConfig config = teacher_run_config(base, point);
        TrainResult run = train_run(config, nullptr);

        SweepOutcome outcome;
        outcome.point = point;
        outcome.accuracy = run.trace.final_row().val_accuracy;
        outcome.diverged = run.diverged;
        outcome.diverged_step = run.diverged ? run.diverged_step : -1;
        result.outcomes.push_back(outcome);

        TeacherEntry entry;
        entry.id = point.id;
        entry.params = std::move(run.params);
        entry.params.frozen = true;
        entry.reported_accuracy = outcome.accuracy;
        result.pool.teachers.push_back(std::move(entry));
    }
    result.pool.validate();
    return result;
}

}  // namespace kdbench
