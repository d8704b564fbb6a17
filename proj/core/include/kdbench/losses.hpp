#pragma once

#include <optional>
#include <vector>

#include "kdbench/schedules.hpp"
#include "kdbench/tape.hpp"
#include "kdbench/teacher_pool.hpp"
#include "kdbench/tensor.hpp"

namespace kdbench {

enum class DistillLoss { KL, MSE };

struct DistillConfig {
    double lambda_kd = 1.0;  // weight of the distillation term; >= 0
    DistillLoss loss = DistillLoss::KL;
    double temperature = 1.0;  // > 0; used by the KL form only
    DistillSchedule schedule;
    TeacherStrategy strategy;

    void validate() const;
};

// Mean over the batch of -log softmax(logits)[label]. Computed via a shifted
// log-sum-exp, so huge logits stay finite. Labels outside [0, classes) throw
// DomainError.
Var cross_entropy(Tape& tape, Var logits, const std::vector<int>& labels);

// Cross entropy against one probability row per example (mixup targets).
// target rows must be non-negative; shape must match the logits.
Var soft_cross_entropy(Tape& tape, Var logits, const Tensor& targets);

// T^2-scaled batch-mean KL(softmax(teacher/T) || softmax(student/T)). The
// teacher side enters as a constant, so gradients flow only to the student.
Var kl_distill(Tape& tape, Var student_logits, const Tensor& teacher_logits, double temperature);

// Mean squared difference over all batch * classes logit entries.
Var mse_distill(Tape& tape, Var student_logits, const Tensor& teacher_logits);

// lambda * kd + ce. When the step is inactive or lambda is zero the result IS
// the ce node: the kd branch never joins the graph, so gradients match a
// ce-only run bit for bit.
Var composite(Tape& tape, Var ce, std::optional<Var> kd, double lambda_kd, bool distill_active);

}  // namespace kdbench
