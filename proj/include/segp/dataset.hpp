// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/tensor.hpp"

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace segp {

/// Labelled samples, one input per row.
struct Dataset {
    Tensor inputs = Tensor({0, 0});
    std::vector<int> labels;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    [[nodiscard]] bool empty() const noexcept { return labels.empty(); }
    [[nodiscard]] Tensor sample(std::size_t i) const { return inputs.row_tensor(i); }

    [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const
    {
        Dataset out;
        std::vector<double> rows;
        rows.reserve(indices.size() * inputs.cols());
        for (std::size_t i : indices) {
            if (i >= size()) {
                throw std::out_of_range("dataset index out of range");
            }
            auto r = inputs.row(i);
            rows.insert(rows.end(), r.begin(), r.end());
            out.labels.push_back(labels[i]);
        }
        out.inputs = Tensor::matrix(indices.size(), inputs.cols(), std::move(rows));
        return out;
    }

    /// Concatenation; both sides must share input width unless one is empty.
    [[nodiscard]] static Dataset concat(const Dataset& a, const Dataset& b)
    {
        if (a.empty()) {
            return b;
        }
        if (b.empty()) {
            return a;
        }
        if (a.inputs.cols() != b.inputs.cols()) {
            throw std::invalid_argument("dataset width mismatch");
        }
        Dataset out;
        std::vector<double> rows(a.inputs.values());
        rows.insert(rows.end(), b.inputs.values().begin(), b.inputs.values().end());
        out.inputs = Tensor::matrix(a.size() + b.size(), a.inputs.cols(), std::move(rows));
        out.labels = a.labels;
        out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
        return out;
    }
};

} // namespace segp
