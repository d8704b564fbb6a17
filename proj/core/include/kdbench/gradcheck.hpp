#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kdbench/tensor.hpp"

namespace kdbench {

// Central finite differences against the tape's reverse pass. The forward
// callback must rebuild its graph from the leaves' current data and return
// the scalar value; compute_grads must leave fresh gradients in each leaf.

struct GradCheckReport {
    bool passed = true;
    double max_rel_err = 0.0;
    std::string worst;  // location of the worst component, for diagnostics
};

// Components where both sides are below tiny_floor are compared absolutely
// (finite differences drown in roundoff there); the rest relatively.
GradCheckReport check_gradients(const std::vector<Tensor*>& leaves,
                                const std::function<double()>& forward,
                                const std::function<void()>& compute_grads, double h = 1e-5,
                                double tol = 1e-4, double tiny_floor = 1e-8);

struct GradSuiteReport {
    int graphs = 0;
    int failures = 0;
    double max_rel_err = 0.0;
    bool passed = false;
    std::string worst;
};

// Randomized composite-loss graphs: a small linear+relu student head, hard
// cross entropy plus a KL or MSE distillation term at temperatures {1, 2, 4},
// random lambda (including 0) and random active flags, so the short-circuit
// path is exercised too.
GradSuiteReport run_gradcheck_suite(int n_graphs, std::uint64_t seed, double h = 1e-5,
                                    double tol = 1e-4);

}  // namespace kdbench
