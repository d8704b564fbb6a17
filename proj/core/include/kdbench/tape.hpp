#pragma once

#include <deque>
#include <vector>

#include "kdbench/tensor.hpp"

namespace kdbench {

// Handle into a Tape; valid only for the tape that produced it.
struct Var {
    int id = -1;
};

// Define-by-run reverse-mode tape over Tensors. Nodes are appended in
// execution order, which is by construction a topological order; backward
// visits only nodes reachable from the root, exactly once, in reverse.
//
// A tape and its tensors belong to one thread. Leaves bind external parameter
// storage and must outlive the tape; gradients accumulate additively into
// Tensor::grad, so calling backward twice without zeroing doubles them.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf bound to caller-owned storage; receives grad iff requires_grad.
    Var leaf(Tensor& parameter);
    // Owned value that never receives a gradient.
    Var constant(Tensor value);

    Var matmul(Var a, Var b);
    // x[m,k] * w[k,n] + bias[n] broadcast over rows.
    Var linear(Var x, Var w, Var bias);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double factor);
    Var relu(Var a);
    Var log(Var a);
    Var mean(Var a);
    Var sum(Var a);

    // Row-wise tempered softmax, max-subtracted for stability.
    Var softmax_rows(Var x, double temperature);
    // Row-wise log(softmax(x/T)) in log-sum-exp form; never underflows to -inf.
    Var log_softmax_rows(Var x, double temperature);

    const Tensor& value(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    // Accumulates d(root)/d(leaf) into every reachable requires_grad leaf.
    // root must be scalar.
    void backward(Var root);

private:
    enum class Op {
        Leaf,
        Constant,
        MatMul,
        Linear,
        Add,
        Sub,
        Mul,
        Scale,
        Relu,
        Log,
        Mean,
        Sum,
        SoftmaxRows,
        LogSoftmaxRows,
    };

    struct Node {
        Op op;
        int a = -1, b = -1, c = -1;
        double k = 0.0;  // scale factor or temperature
        Tensor value;
        Tensor* bound = nullptr;  // leaf storage
        std::vector<double> adj;
    };

    Var push(Node node);
    const Tensor& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    void check_var(Var v, const char* ctx) const;

    // Deque keeps node references stable across pushes, so a value() result
    // stays valid while more ops are recorded.
    std::deque<Node> nodes_;
};

}  // namespace kdbench
