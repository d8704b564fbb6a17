#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace kdbench {

// Dense row-major float64 tensor. `grad` stays empty until a backward pass
// populates it; when present it matches `data` in length. Committed tensors
// hold only finite values.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);
    static Tensor row_vector(std::vector<double> values);
    // 2-d tensor from nested initializer rows; all rows must be equal length.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t numel() const { return data.size(); }
    bool is_scalar() const { return data.size() == 1; }

    int rows() const;  // first dim of a 2-d tensor
    int cols() const;  // second dim of a 2-d tensor

    double& at(int r, int c);
    double at(int r, int c) const;

    void ensure_grad();  // size grad to data, zero-filled, if absent
    void zero_grad();    // clear accumulated gradient

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

}  // namespace kdbench
