#include "kdbench/schedules.hpp"

#include <cmath>
#include <numbers>

#include "kdbench/errors.hpp"

namespace kdbench {

long long floor_fraction(double fraction, long long count) {
    return static_cast<long long>(std::floor(fraction * static_cast<double>(count) + 1e-9));
}

void LrSchedule::validate() const {
    if (!(base_lr > 0.0)) throw DomainError("base_lr must be > 0");
    if (min_lr < 0.0 || min_lr > base_lr) throw DomainError("min_lr must lie in [0, base_lr]");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        throw DomainError("warmup_fraction must lie in [0, 1)");
    if (total_steps < 1) throw DomainError("total_steps must be >= 1");
    if (warmup_fraction > 0.0 && warmup_steps() < 1)
        throw DomainError("warmup_fraction rounds to zero warmup steps");
    if (warmup_steps() >= total_steps) throw DomainError("warmup must end before the last step");
}

long long LrSchedule::warmup_steps() const { return floor_fraction(warmup_fraction, total_steps); }

double lr_at(const LrSchedule& sched, long long step) {
    sched.validate();
    if (step < 0 || step >= sched.total_steps) throw DomainError("step out of range for schedule");
    const long long warmup = sched.warmup_steps();
    if (step < warmup)
        return sched.base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const long long span = sched.total_steps - 1 - warmup;
    const double progress =
        span > 0 ? static_cast<double>(step - warmup) / static_cast<double>(span) : 1.0;
    switch (sched.kind) {
        case LrKind::CosineAnnealing:
            return sched.min_lr +
                   0.5 * (sched.base_lr - sched.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
        case LrKind::LinearDecay:
            return sched.base_lr + (sched.min_lr - sched.base_lr) * progress;
    }
    throw ContractError("unknown lr schedule kind");
}

void DistillSchedule::validate() const {
    if (total_steps < 1) throw DomainError("total_steps must be >= 1");
    switch (kind) {
        case DistillKind::Always:
            return;
        case DistillKind::FirstFraction:
            if (!(fraction > 0.0 && fraction <= 1.0))
                throw DomainError("fraction must lie in (0, 1]");
            return;
        case DistillKind::EveryK:
            if (every_k < 1) throw DomainError("every_k must be >= 1");
            return;
    }
    throw ContractError("unknown distillation schedule kind");
}

bool distill_active(const DistillSchedule& sched, long long step) {
    sched.validate();
    if (step < 0 || step >= sched.total_steps) throw DomainError("step out of range for schedule");
    switch (sched.kind) {
        case DistillKind::Always:
            return true;
        case DistillKind::FirstFraction:
            return step < floor_fraction(sched.fraction, sched.total_steps);
        case DistillKind::EveryK:
            return step % sched.every_k == 0;
    }
    throw ContractError("unknown distillation schedule kind");
}

long long distill_active_count(const DistillSchedule& sched) {
    sched.validate();
    switch (sched.kind) {
        case DistillKind::Always:
            return sched.total_steps;
        case DistillKind::FirstFraction:
            return floor_fraction(sched.fraction, sched.total_steps);
        case DistillKind::EveryK:
            return (sched.total_steps + sched.every_k - 1) / sched.every_k;
    }
    throw ContractError("unknown distillation schedule kind");
}

}  // namespace kdbench
