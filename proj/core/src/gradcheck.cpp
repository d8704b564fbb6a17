#include "kdbench/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "kdbench/errors.hpp"
#include "kdbench/losses.hpp"
#include "kdbench/rng.hpp"
#include "kdbench/tape.hpp"

namespace kdbench {

GradCheckReport check_gradients(const std::vector<Tensor*>& leaves,
                                const std::function<double()>& forward,
                                const std::function<void()>& compute_grads, double h, double tol,
                                double tiny_floor) {
    if (leaves.empty()) throw DomainError("gradient check needs at least one leaf");
    compute_grads();
    std::vector<std::vector<double>> analytic;
    for (const Tensor* leaf : leaves) {
        if (leaf->grad.size() != leaf->data.size())
            throw ContractError("compute_grads left a leaf without gradients");
        analytic.push_back(leaf->grad);
    }

    GradCheckReport report;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor* leaf = leaves[li];
        for (std::size_t i = 0; i < leaf->data.size(); ++i) {
            const double saved = leaf->data[i];
            leaf->data[i] = saved + h;
            const double up = forward();
            leaf->data[i] = saved - h;
            const double down = forward();
            leaf->data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[li][i];

            const double scale = std::max(std::abs(a), std::abs(numeric));
            double err;
            bool ok;
            if (scale <= tiny_floor) {
                err = std::abs(a - numeric);
                ok = err <= tiny_floor;
            } else {
                err = std::abs(a - numeric) / scale;
                ok = err <= tol;
            }
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst = "leaf " + std::to_string(li) + " [" + std::to_string(i) + "]";
            }
            if (!ok) report.passed = false;
        }
    }
    return report;
}

GradSuiteReport run_gradcheck_suite(int n_graphs, std::uint64_t seed, double h, double tol) {
    if (n_graphs < 1) throw DomainError("n_graphs must be >= 1");
    GradSuiteReport suite;
    Rng rng(mix_seed(seed, "gradcheck"));
    const double temperatures[] = {1.0, 2.0, 4.0};
    const double lambdas[] = {0.0, 0.3, 1.0, 2.5};

    for (int g = 0; g < n_graphs; ++g) {
        const int b = 1 + static_cast<int>(rng.below(4));
        const int d = 2 + static_cast<int>(rng.below(4));
        const int c = 2 + static_cast<int>(rng.below(5));

        Tensor x = Tensor::zeros({b, d});
        Tensor w = Tensor::zeros({d, c});
        Tensor bias = Tensor::zeros({1, c});
        for (auto& v : x.data) v = rng.uniform(-2.0, 2.0);
        for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
        for (auto& v : bias.data) v = rng.uniform(-0.5, 0.5);
        x.requires_grad = w.requires_grad = bias.requires_grad = true;

        Tensor teacher = Tensor::zeros({b, c});
        for (auto& v : teacher.data) v = rng.uniform(-3.0, 3.0);
        std::vector<int> labels(static_cast<std::size_t>(b));
        for (auto& l : labels) l = static_cast<int>(rng.below(c));

        const double temperature = temperatures[rng.below(3)];
        const double lambda = lambdas[rng.below(4)];
        const bool active = rng.below(4) != 0;  // sometimes gate the kd term off
        const bool use_kl = rng.below(2) == 0;
        const bool extra_relu = rng.below(2) == 0;

        const auto build = [&](Tape& tape) {
            const Var xv = tape.leaf(x);
            const Var wv = tape.leaf(w);
            const Var bv = tape.leaf(bias);
            Var logits = tape.linear(xv, wv, bv);
            if (extra_relu) logits = tape.add(logits, tape.scale(tape.relu(logits), 0.25));
            const Var ce = cross_entropy(tape, logits, labels);
            std::optional<Var> kd;
            if (active && lambda > 0.0)
                kd = use_kl ? kl_distill(tape, logits, teacher, temperature)
                            : mse_distill(tape, logits, teacher);
            Var loss = composite(tape, ce, kd, lambda, active);
            // fold in a softmax probe so its adjoint is covered as well
            Tensor probe = Tensor::zeros({b, c});
            for (std::size_t i = 0; i < probe.data.size(); ++i)
                probe.data[i] = ((i % 3) - 1.0) * 0.5;
            const Var probed =
                tape.sum(tape.mul(tape.softmax_rows(logits, temperature), tape.constant(probe)));
            return tape.add(loss, tape.scale(probed, 0.1));
        };

        const std::vector<Tensor*> leaves = {&x, &w, &bias};
        const auto forward = [&]() {
            Tape tape;
            return tape.value(build(tape)).data[0];
        };
        const auto compute_grads = [&]() {
            for (Tensor* t : leaves) t->zero_grad();
            Tape tape;
            tape.backward(build(tape));
        };

        const GradCheckReport report = check_gradients(leaves, forward, compute_grads, h, tol);
        suite.graphs += 1;
        if (report.max_rel_err > suite.max_rel_err) {
            suite.max_rel_err = report.max_rel_err;
            suite.worst = "graph " + std::to_string(g) + ", " + report.worst;
        }
        if (!report.passed) suite.failures += 1;
    }
    suite.passed = suite.failures == 0;
    return suite;
}

}  // namespace kdbench
