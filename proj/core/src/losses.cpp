#include "kdbench/losses.hpp"

#include <algorithm>
#include <cmath>

#include "kdbench/errors.hpp"

namespace kdbench {

void DistillConfig::validate() const {
    if (lambda_kd < 0.0) throw DomainError("lambda_kd must be >= 0");
    if (!(temperature > 0.0)) throw DomainError("temperature must be > 0");
    schedule.validate();
}

namespace {

void require_logits(const Tensor& t, const char* what) {
    if (t.shape.size() != 2 || t.rows() < 1 || t.cols() < 2)
        throw ShapeError(std::string(what) + " must be [batch, classes] with classes >= 2");
}

// Row-wise softmax with the max subtracted first; exact for any finite input.
Tensor softmax_rows_plain(const Tensor& logits, double temperature) {
    Tensor out = logits;
    for (int i = 0; i < logits.rows(); ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < logits.cols(); ++j) {
            const double e = std::exp((logits.at(i, j) - mx) / temperature);
            out.at(i, j) = e;
            denom += e;
        }
        for (int j = 0; j < logits.cols(); ++j) out.at(i, j) /= denom;
    }
    return out;
}

}  // namespace

Var cross_entropy(Tape& tape, Var logits, const std::vector<int>& labels) {
    const Tensor& z = tape.value(logits);
    require_logits(z, "logits");
    if (static_cast<int>(labels.size()) != z.rows())
        throw ShapeError("labels must have one entry per batch row");
    Tensor onehot = Tensor::zeros(z.shape);
    for (int i = 0; i < z.rows(); ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        if (label < 0 || label >= z.cols()) throw DomainError("label out of range");
        onehot.at(i, label) = 1.0;
    }
    const Var log_probs = tape.log_softmax_rows(logits, 1.0);
    const Var picked = tape.sum(tape.mul(log_probs, tape.constant(onehot)));
    return tape.scale(picked, -1.0 / z.rows());
}

Var soft_cross_entropy(Tape& tape, Var logits, const Tensor& targets) {
    const Tensor& z = tape.value(logits);
    require_logits(z, "logits");
    if (!z.same_shape(targets)) throw ShapeError("targets must match the logits shape");
    for (double v : targets.data)
        if (v < 0.0) throw DomainError("target probabilities must be >= 0");
    const Var log_probs = tape.log_softmax_rows(logits, 1.0);
    const Var dotted = tape.sum(tape.mul(log_probs, tape.constant(targets)));
    return tape.scale(dotted, -1.0 / z.rows());
}

Var kl_distill(Tape& tape, Var student_logits, const Tensor& teacher_logits, double temperature) {
    if (!(temperature > 0.0)) throw DomainError("temperature must be > 0");
    const Tensor& z = tape.value(student_logits);
    require_logits(z, "student logits");
    if (!z.same_shape(teacher_logits)) throw ShapeError("teacher logits must match the student shape");

    const Tensor probs = softmax_rows_plain(teacher_logits, temperature);
    double teacher_entropy_sum = 0.0;  // sum of p * log p with 0 log 0 = 0
    for (double p : probs.data)
        if (p > 0.0) teacher_entropy_sum += p * std::log(p);

    // KL = (T^2 / b) * (sum p log p - sum p * log_softmax(student / T))
    const Var student_lp = tape.log_softmax_rows(student_logits, temperature);
    const Var cross = tape.sum(tape.mul(student_lp, tape.constant(probs)));
    const Var gap = tape.sub(tape.constant(Tensor::scalar(teacher_entropy_sum)), cross);
    return tape.scale(gap, temperature * temperature / z.rows());
}

Var mse_distill(Tape& tape, Var student_logits, const Tensor& teacher_logits) {
    const Tensor& z = tape.value(student_logits);
    require_logits(z, "student logits");
    if (!z.same_shape(teacher_logits)) throw ShapeError("teacher logits must match the student shape");
    const Var diff = tape.sub(student_logits, tape.constant(teacher_logits));
    return tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / z.numel());
}

Var composite(Tape& tape, Var ce, std::optional<Var> kd, double lambda_kd, bool active) {
    if (lambda_kd < 0.0) throw DomainError("lambda_kd must be >= 0");
    if (!tape.value(ce).is_scalar()) throw ShapeError("ce must be scalar");
    if (!active || lambda_kd == 0.0) return ce;
    if (!kd) throw ContractError("active distillation step needs a kd term");
    if (!tape.value(*kd).is_scalar()) throw ShapeError("kd must be scalar");
    return tape.add(tape.scale(*kd, lambda_kd), ce);
}

}  // namespace kdbench
