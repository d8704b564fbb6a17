#include "kdbench/tape.hpp"

#include <cmath>
#include <cstdlib>

#include "kdbench/errors.hpp"

namespace kdbench {

namespace {

void require_same_or_scalar(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b) || a.is_scalar() || b.is_scalar()) return;
    throw ShapeError(std::string(op) + ": shapes " + shape_to_string(a.shape) + " and " +
                     shape_to_string(b.shape) + " are neither equal nor scalar-broadcastable");
}

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string(op) + " produced non-finite values");
}

}  // namespace

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_var(Var v, const char* ctx) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw ContractError(std::string(ctx) + ": var does not belong to this tape");
}

const Tensor& Tape::value(Var v) const {
    check_var(v, "value");
    return nodes_[static_cast<std::size_t>(v.id)].value;
}

Var Tape::leaf(Tensor& parameter) {
    if (!parameter.all_finite()) throw NumericError("leaf parameter holds non-finite values");
    Node n;
    n.op = Op::Leaf;
    n.value = parameter;  // snapshot; gradient flows to the bound storage
    n.bound = &parameter;
    return push(std::move(n));
}

Var Tape::constant(Tensor value) {
    if (!value.all_finite()) throw NumericError("constant holds non-finite values");
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    check_var(a, "matmul");
    check_var(b, "matmul");
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.cols() != B.rows())
        throw ShapeError("matmul: incompatible shapes " + shape_to_string(A.shape) + " x " +
                         shape_to_string(B.shape));
    const int m = A.rows(), k = A.cols(), nn = B.cols();
    Tensor C = Tensor::zeros({m, nn});
    for (int i = 0; i < m; ++i) {
        const double* arow = &A.data[static_cast<std::size_t>(i) * static_cast<std::size_t>(k)];
        double* crow = &C.data[static_cast<std::size_t>(i) * static_cast<std::size_t>(nn)];
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = &B.data[static_cast<std::size_t>(kk) * static_cast<std::size_t>(nn)];
            for (int j = 0; j < nn; ++j) crow[j] += av * brow[j];
        }
    }
    require_finite(C, "matmul");
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(C);
    return push(std::move(n));
}

Var Tape::linear(Var x, Var w, Var bias) {
    check_var(x, "linear");
    check_var(w, "linear");
    check_var(bias, "linear");
    const Tensor& X = val(x.id);
    const Tensor& W = val(w.id);
    const Tensor& B = val(bias.id);
    if (X.shape.size() != 2 || W.shape.size() != 2 || X.cols() != W.rows())
        throw ShapeError("linear: incompatible shapes " + shape_to_string(X.shape) + " x " +
                         shape_to_string(W.shape));
    const int nn = W.cols();
    if (static_cast<int>(B.numel()) != nn)
        throw ShapeError("linear: bias length " + std::to_string(B.numel()) + " != output width " +
                         std::to_string(nn));
    const int m = X.rows(), k = X.cols();
    Tensor Y = Tensor::zeros({m, nn});
    for (int i = 0; i < m; ++i) {
        double* yrow = &Y.data[static_cast<std::size_t>(i) * static_cast<std::size_t>(nn)];
        for (int j = 0; j < nn; ++j) yrow[j] = B.data[static_cast<std::size_t>(j)];
        const double* xrow = &X.data[static_cast<std::size_t>(i) * static_cast<std::size_t>(k)];
        for (int kk = 0; kk < k; ++kk) {
            const double xv = xrow[kk];
            const double* wrow = &W.data[static_cast<std::size_t>(kk) * static_cast<std::size_t>(nn)];
            for (int j = 0; j < nn; ++j) yrow[j] += xv * wrow[j];
        }
    }
    require_finite(Y, "linear");
    Node n;
    n.op = Op::Linear;
    n.a = x.id;
    n.b = w.id;
    n.c = bias.id;
    n.value = std::move(Y);
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    check_var(a, "add");
    check_var(b, "add");
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    require_same_or_scalar(A, B, "add");
    const Tensor& big = A.is_scalar() && !B.is_scalar() ? B : A;
    Tensor C = Tensor::zeros(big.shape);
    for (std::size_t i = 0; i < C.numel(); ++i)
        C.data[i] = A.data[A.is_scalar() ? 0 : i] + B.data[B.is_scalar() ? 0 : i];
    require_finite(C, "add");
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(C);
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    check_var(a, "sub");
    check_var(b, "sub");
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    require_same_or_scalar(A, B, "sub");
    const Tensor& big = A.is_scalar() && !B.is_scalar() ? B : A;
    Tensor C = Tensor::zeros(big.shape);
    for (std::size_t i = 0; i < C.numel(); ++i)
        C.data[i] = A.data[A.is_scalar() ? 0 : i] - B.data[B.is_scalar() ? 0 : i];
    require_finite(C, "sub");
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(C);
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    check_var(a, "mul");
    check_var(b, "mul");
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    require_same_or_scalar(A, B, "mul");
    const Tensor& big = A.is_scalar() && !B.is_scalar() ? B : A;
    Tensor C = Tensor::zeros(big.shape);
    for (std::size_t i = 0; i < C.numel(); ++i)
        C.data[i] = A.data[A.is_scalar() ? 0 : i] * B.data[B.is_scalar() ? 0 : i];
    require_finite(C, "mul");
    Node n;
    n.op = Op::Mul;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(C);
    return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
    check_var(a, "scale");
    if (!std::isfinite(factor)) throw DomainError("scale: factor must be finite");
    const Tensor& A = val(a.id);
    Tensor C = Tensor::zeros(A.shape);
    for (std::size_t i = 0; i < C.numel(); ++i) C.data[i] = factor * A.data[i];
    require_finite(C, "scale");
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.k = factor;
    n.value = std::move(C);
    return push(std::move(n));
}

Var Tape::relu(Var a) {
    check_var(a, "relu");
    const Tensor& A = val(a.id);
    Tensor C = Tensor::zeros(A.shape);
    for (std::size_t i = 0; i < C.numel(); ++i) C.data[i] = A.data[i] > 0.0 ? A.data[i] : 0.0;
    Node n;
    n.op = Op::Relu;
    n.a = a.id;
    n.value = std::move(C);
    return push(std::move(n));
}

Var Tape::log(Var a) {
    check_var(a, "log");
    const Tensor& A = val(a.id);
    for (double v : A.data)
        if (!(v > 0.0)) throw DomainError("log: input must be strictly positive, got " + std::to_string(v));
    Tensor C = Tensor::zeros(A.shape);
    for (std::size_t i = 0; i < C.numel(); ++i) C.data[i] = std::log(A.data[i]);
    require_finite(C, "log");
    Node n;
    n.op = Op::Log;
    n.a = a.id;
    n.value = std::move(C);
    return push(std::move(n));
}

Var Tape::mean(Var a) {
    check_var(a, "mean");
    const Tensor& A = val(a.id);
    double s = 0.0;
    for (double v : A.data) s += v;
    Tensor C = Tensor::scalar(s / static_cast<double>(A.numel()));
    require_finite(C, "mean");
    Node n;
    n.op = Op::Mean;
    n.a = a.id;
    n.value = std::move(C);
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    check_var(a, "sum");
    const Tensor& A = val(a.id);
    double s = 0.0;
    for (double v : A.data) s += v;
    Tensor C = Tensor::scalar(s);
    require_finite(C, "sum");
    Node n;
    n.op = Op::Sum;
    n.a = a.id;
    n.value = std::move(C);
    return push(std::move(n));
}

Var Tape::softmax_rows(Var x, double temperature) {
    check_var(x, "softmax_rows");
    if (!(temperature > 0.0)) throw DomainError("softmax_rows: temperature must be positive");
    const Tensor& X = val(x.id);
    if (X.shape.size() != 2) throw ShapeError("softmax_rows: input must be 2-d, got " + shape_to_string(X.shape));
    const int m = X.rows(), c = X.cols();
    Tensor Y = Tensor::zeros({m, c});
    for (int i = 0; i < m; ++i) {
        const double* xr = &X.data[static_cast<std::size_t>(i) * static_cast<std::size_t>(c)];
        double* yr = &Y.data[static_cast<std::size_t>(i) * static_cast<std::size_t>(c)];
        double mx = xr[0] / temperature;
        for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j] / temperature);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            yr[j] = std::exp(xr[j] / temperature - mx);
            denom += yr[j];
        }
        for (int j = 0; j < c; ++j) yr[j] /= denom;
    }
    require_finite(Y, "softmax_rows");
    Node n;
    n.op = Op::SoftmaxRows;
    n.a = x.id;
    n.k = temperature;
    n.value = std::move(Y);
    return push(std::move(n));
}

Var Tape::log_softmax_rows(Var x, double temperature) {
    check_var(x, "log_softmax_rows");
    if (!(temperature > 0.0)) throw DomainError("log_softmax_rows: temperature must be positive");
    const Tensor& X = val(x.id);
    if (X.shape.size() != 2)
        throw ShapeError("log_softmax_rows: input must be 2-d, got " + shape_to_string(X.shape));
    const int m = X.rows(), c = X.cols();
    Tensor Y = Tensor::zeros({m, c});
    for (int i = 0; i < m; ++i) {
        const double* xr = &X.data[static_cast<std::size_t>(i) * static_cast<std::size_t>(c)];
        double* yr = &Y.data[static_cast<std::size_t>(i) * static_cast<std::size_t>(c)];
        double mx = xr[0] / temperature;
        for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j] / temperature);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) denom += std::exp(xr[j] / temperature - mx);
        const double lse = std::log(denom);
        for (int j = 0; j < c; ++j) yr[j] = xr[j] / temperature - mx - lse;
    }
    require_finite(Y, "log_softmax_rows");
    Node n;
    n.op = Op::LogSoftmaxRows;
    n.a = x.id;
    n.k = temperature;
    n.value = std::move(Y);
    return push(std::move(n));
}

void Tape::backward(Var root) {
    check_var(root, "backward");
    Node& r = nodes_[static_cast<std::size_t>(root.id)];
    if (!r.value.is_scalar())
        throw ContractError("backward: root must be scalar, has shape " + shape_to_string(r.value.shape));

    // Fresh adjoints each call; repeated calls re-accumulate into leaf grads.
    std::vector<char> reached(nodes_.size(), 0);
    for (int i = 0; i <= root.id; ++i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        n.adj.assign(n.value.numel(), 0.0);
    }
    reached[static_cast<std::size_t>(root.id)] = 1;
    r.adj[0] = 1.0;

    auto spread = [&](int out_numel, Node& dst, auto&& contribution) {
        // contribution(i) yields the adjoint increment for output element i;
        // a scalar input broadcast over the output sums all contributions.
        if (dst.value.is_scalar()) {
            double s = 0.0;
            for (int i = 0; i < out_numel; ++i) s += contribution(i);
            dst.adj[0] += s;
        } else {
            for (int i = 0; i < out_numel; ++i) dst.adj[static_cast<std::size_t>(i)] += contribution(i);
        }
    };

    for (int id = root.id; id >= 0; --id) {
        if (!reached[static_cast<std::size_t>(id)]) continue;
        Node& n = nodes_[static_cast<std::size_t>(id)];
        auto mark = [&](int input) {
            if (input >= 0) reached[static_cast<std::size_t>(input)] = 1;
        };
        switch (n.op) {
            case Op::Leaf:
            case Op::Constant:
                break;
            case Op::MatMul: {
                mark(n.a);
                mark(n.b);
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                Node& B = nodes_[static_cast<std::size_t>(n.b)];
                const int m = A.value.rows(), k = A.value.cols(), nn = B.value.cols();
                // dA += dC * B^T
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        double s = 0.0;
                        for (int j = 0; j < nn; ++j)
                            s += n.adj[static_cast<std::size_t>(i) * nn + j] *
                                 B.value.data[static_cast<std::size_t>(kk) * nn + j];
                        A.adj[static_cast<std::size_t>(i) * k + kk] += s;
                    }
                // dB += A^T * dC
                for (int kk = 0; kk < k; ++kk)
                    for (int j = 0; j < nn; ++j) {
                        double s = 0.0;
                        for (int i = 0; i < m; ++i)
                            s += A.value.data[static_cast<std::size_t>(i) * k + kk] *
                                 n.adj[static_cast<std::size_t>(i) * nn + j];
                        B.adj[static_cast<std::size_t>(kk) * nn + j] += s;
                    }
                break;
            }
            case Op::Linear: {
                mark(n.a);
                mark(n.b);
                mark(n.c);
                Node& X = nodes_[static_cast<std::size_t>(n.a)];
                Node& W = nodes_[static_cast<std::size_t>(n.b)];
                Node& Bv = nodes_[static_cast<std::size_t>(n.c)];
                const int m = X.value.rows(), k = X.value.cols(), nn = W.value.cols();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        double s = 0.0;
                        for (int j = 0; j < nn; ++j)
                            s += n.adj[static_cast<std::size_t>(i) * nn + j] *
                                 W.value.data[static_cast<std::size_t>(kk) * nn + j];
                        X.adj[static_cast<std::size_t>(i) * k + kk] += s;
                    }
                for (int kk = 0; kk < k; ++kk)
                    for (int j = 0; j < nn; ++j) {
                        double s = 0.0;
                        for (int i = 0; i < m; ++i)
                            s += X.value.data[static_cast<std::size_t>(i) * k + kk] *
                                 n.adj[static_cast<std::size_t>(i) * nn + j];
                        W.adj[static_cast<std::size_t>(kk) * nn + j] += s;
                    }
                for (int j = 0; j < nn; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < m; ++i) s += n.adj[static_cast<std::size_t>(i) * nn + j];
                    Bv.adj[static_cast<std::size_t>(j)] += s;
                }
                break;
            }
            case Op::Add: {
                mark(n.a);
                mark(n.b);
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                Node& B = nodes_[static_cast<std::size_t>(n.b)];
                const int cnt = static_cast<int>(n.value.numel());
                spread(cnt, A, [&](int i) { return n.adj[static_cast<std::size_t>(i)]; });
                spread(cnt, B, [&](int i) { return n.adj[static_cast<std::size_t>(i)]; });
                break;
            }
            case Op::Sub: {
                mark(n.a);
                mark(n.b);
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                Node& B = nodes_[static_cast<std::size_t>(n.b)];
                const int cnt = static_cast<int>(n.value.numel());
                spread(cnt, A, [&](int i) { return n.adj[static_cast<std::size_t>(i)]; });
                spread(cnt, B, [&](int i) { return -n.adj[static_cast<std::size_t>(i)]; });
                break;
            }
            case Op::Mul: {
                mark(n.a);
                mark(n.b);
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                Node& B = nodes_[static_cast<std::size_t>(n.b)];
                const int cnt = static_cast<int>(n.value.numel());
                spread(cnt, A, [&](int i) {
                    const double bv = B.value.data[B.value.is_scalar() ? 0 : static_cast<std::size_t>(i)];
                    return n.adj[static_cast<std::size_t>(i)] * bv;
                });
                spread(cnt, B, [&](int i) {
                    const double av = A.value.data[A.value.is_scalar() ? 0 : static_cast<std::size_t>(i)];
                    return n.adj[static_cast<std::size_t>(i)] * av;
                });
                break;
            }
            case Op::Scale: {
                mark(n.a);
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                for (std::size_t i = 0; i < n.adj.size(); ++i) A.adj[i] += n.k * n.adj[i];
                break;
            }
            case Op::Relu: {
                mark(n.a);
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                // subgradient at exactly 0 is 0
                for (std::size_t i = 0; i < n.adj.size(); ++i)
                    if (A.value.data[i] > 0.0) A.adj[i] += n.adj[i];
                break;
            }
            case Op::Log: {
                mark(n.a);
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                for (std::size_t i = 0; i < n.adj.size(); ++i) A.adj[i] += n.adj[i] / A.value.data[i];
                break;
            }
            case Op::Mean: {
                mark(n.a);
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                const double g = n.adj[0] / static_cast<double>(A.value.numel());
                for (std::size_t i = 0; i < A.adj.size(); ++i) A.adj[i] += g;
                break;
            }
            case Op::Sum: {
                mark(n.a);
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                for (std::size_t i = 0; i < A.adj.size(); ++i) A.adj[i] += n.adj[0];
                break;
            }
            case Op::SoftmaxRows: {
                mark(n.a);
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                const int m = n.value.rows(), c = n.value.cols();
                for (int i = 0; i < m; ++i) {
                    const double* y = &n.value.data[static_cast<std::size_t>(i) * c];
                    const double* dy = &n.adj[static_cast<std::size_t>(i) * c];
                    double dot = 0.0;
                    for (int j = 0; j < c; ++j) dot += dy[j] * y[j];
                    for (int j = 0; j < c; ++j)
                        A.adj[static_cast<std::size_t>(i) * c + j] += y[j] * (dy[j] - dot) / n.k;
                }
                break;
            }
            case Op::LogSoftmaxRows: {
                mark(n.a);
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                const int m = n.value.rows(), c = n.value.cols();
                for (int i = 0; i < m; ++i) {
                    const double* y = &n.value.data[static_cast<std::size_t>(i) * c];
                    const double* dy = &n.adj[static_cast<std::size_t>(i) * c];
                    double tot = 0.0;
                    for (int j = 0; j < c; ++j) tot += dy[j];
                    for (int j = 0; j < c; ++j)
                        A.adj[static_cast<std::size_t>(i) * c + j] += (dy[j] - std::exp(y[j]) * tot) / n.k;
                }
                break;
            }
        }
    }

    // Commit adjoints of reached leaves into their bound tensors.
    for (int id = 0; id <= root.id; ++id) {
        if (!reached[static_cast<std::size_t>(id)]) continue;
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.op == Op::Leaf && n.bound != nullptr && n.bound->requires_grad) {
            n.bound->ensure_grad();
            for (std::size_t i = 0; i < n.adj.size(); ++i) n.bound->grad[i] += n.adj[i];
        }
    }
}

}  // namespace kdbench
