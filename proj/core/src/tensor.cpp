#include "kdbench/tensor.hpp"

#include <cmath>
#include <sstream>

#include "kdbench/errors.hpp"

namespace kdbench {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_to_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
    if (shape_numel(shape) != data.size())
        throw ShapeError("shape " + shape_to_string(shape) + " does not match data length " +
                         std::to_string(data.size()));
}

Tensor Tensor::zeros(std::vector<int> shape) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::row_vector(std::vector<double> values) {
    const int n = static_cast<int>(values.size());
    return Tensor({1, n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const int r = static_cast<int>(rows.size());
    if (r == 0) throw ShapeError("matrix needs at least one row");
    const int c = static_cast<int>(rows.begin()->size());
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(r) * static_cast<std::size_t>(c));
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != c) throw ShapeError("matrix rows have unequal length");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

int Tensor::rows() const {
    if (shape.size() != 2) throw ShapeError("rows(): tensor is not 2-d, shape " + shape_to_string(shape));
    return shape[0];
}

int Tensor::cols() const {
    if (shape.size() != 2) throw ShapeError("cols(): tensor is not 2-d, shape " + shape_to_string(shape));
    return shape[1];
}

double& Tensor::at(int r, int c) {
    return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) + static_cast<std::size_t>(c)];
}

double Tensor::at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) + static_cast<std::size_t>(c)];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() { grad.clear(); }

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace kdbench
