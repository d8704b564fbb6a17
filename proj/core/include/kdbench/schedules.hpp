#pragma once

#include <cstdint>

namespace kdbench {

enum class LrKind { CosineAnnealing, LinearDecay };

struct LrSchedule {
    LrKind kind = LrKind::CosineAnnealing;
    double base_lr = 0.0;
    double min_lr = 0.0;             // cosine floor; linear decay ends at 0
    double warmup_fraction = 0.0;    // [0, 1); warmup spans floor(fraction * total_steps) steps
    long long total_steps = 0;

    // Throws DomainError on base_lr <= 0, min_lr < 0 or > base_lr,
    // warmup_fraction outside [0, 1), total_steps < 1, or a nonzero
    // warmup_fraction that rounds to zero warmup steps.
    void validate() const;
    long long warmup_steps() const;
};

// Learning rate for one step in [0, total_steps). During warmup the rate
// ramps linearly as base_lr * (step + 1) / warmup_steps, which meets the
// decay curve at the warmup boundary. After warmup, progress runs over the
// remaining steps so the final step lands exactly on the floor.
double lr_at(const LrSchedule& sched, long long step);

enum class DistillKind { Always, FirstFraction, EveryK };

struct DistillSchedule {
    DistillKind kind = DistillKind::Always;
    double fraction = 1.0;  // FirstFraction: active while step < floor(fraction * total_steps)
    long long every_k = 1;  // EveryK: active when step % every_k == 0
    long long total_steps = 0;

    void validate() const;
};

bool distill_active(const DistillSchedule& sched, long long step);

// Exact number of active steps over the whole run: total for Always,
// floor(fraction * total) for FirstFraction, ceil(total / k) for EveryK.
long long distill_active_count(const DistillSchedule& sched);

// floor(fraction * count) computed with a tiny nudge so decimal fractions
// like 0.29 * 100 land on the intended integer.
long long floor_fraction(double fraction, long long count);

}  // namespace kdbench
