// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace segp {

/// Dense rank-0..2 array of doubles in row-major order.
///
/// Row-wise kernels view a rank-1 tensor as a single row (1 x n) and a
/// scalar as 1 x 1, so most code never has to branch on rank.
class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double value) { return Tensor({}, std::vector<double>{value}); }
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
    [[nodiscard]] std::size_t cols() const noexcept
    {
        if (shape_.empty()) {
            return 1;
        }
        return shape_.back();
    }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    [[nodiscard]] std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept
    {
        return {data_.data() + r * cols(), cols()};
    }

    /// Value of a single-element tensor.
    [[nodiscard]] double item() const;

    [[nodiscard]] bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    [[nodiscard]] bool all_finite() const noexcept;

    /// Copy of row r as a rank-1 tensor.
    [[nodiscard]] Tensor row_tensor(std::size_t r) const;
    /// Stack equal-length rank-1 tensors into a matrix.
    static Tensor stack_rows(std::span<const Tensor> rows);

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

[[nodiscard]] std::string shape_string(const std::vector<std::size_t>& shape);

// Small dense helpers used outside the graph engine.
[[nodiscard]] double dot(std::span<const double> a, std::span<const double> b);
[[nodiscard]] double l2_norm(std::span<const double> a);
[[nodiscard]] double linf_norm(std::span<const double> a);

} // namespace segp
