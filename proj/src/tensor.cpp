// SPDX-License-Identifier: Apache-2.0

#include "segp/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace segp {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape)
{
    if (shape.size() > 2) {
        throw std::invalid_argument("tensor rank " + std::to_string(shape.size()) + " exceeds 2");
    }
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill)
{
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data))
{
    if (element_count(shape_) != data_.size()) {
        throw std::invalid_argument("tensor shape " + shape_string(shape_) + " does not hold "
                                    + std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::vector(std::vector<double> values)
{
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
{
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw std::invalid_argument("ragged matrix literal");
        }
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values));
}

double Tensor::item() const
{
    if (data_.size() != 1) {
        throw std::logic_error("item() on tensor of shape " + shape_string(shape_));
    }
    return data_[0];
}

bool Tensor::all_finite() const noexcept
{
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

Tensor Tensor::row_tensor(std::size_t r) const
{
    auto view = row(r);
    return Tensor::vector({view.begin(), view.end()});
}

Tensor Tensor::stack_rows(std::span<const Tensor> rows)
{
    if (rows.empty()) {
        return Tensor({0, 0});
    }
    const std::size_t c = rows.front().size();
    std::vector<double> values;
    values.reserve(rows.size() * c);
    for (const auto& r : rows) {
        if (r.size() != c) {
            throw std::invalid_argument("stack_rows: length mismatch");
        }
        values.insert(values.end(), r.values().begin(), r.values().end());
    }
    return Tensor({rows.size(), c}, std::move(values));
}

std::string shape_string(const std::vector<std::size_t>& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << ']';
    return out.str();
}

double dot(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("dot: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double linf_norm(std::span<const double> a)
{
    double m = 0.0;
    for (double v : a) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

} // namespace segp
