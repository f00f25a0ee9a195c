// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/tensor.hpp"

#include <cstddef>

namespace segp::kernels {

enum class Trans { no, yes };

/// Norm floor for l2 normalization; rows below it are scaled by 1/kNormFloor.
inline constexpr double kNormFloor = 1e-8;

// Row-parallel OpenMP kernels. Every output element is produced by exactly
// one thread with a fixed summation order, so results are bit-identical to
// the serial reference for any thread count.

/// op(a) * op(b). A rank-1 `a` (untransposed) is a row vector and yields a rank-1 result.
[[nodiscard]] Tensor matmul(const Tensor& a, Trans ta, const Tensor& b, Trans tb);
[[nodiscard]] inline Tensor matmul(const Tensor& a, const Tensor& b) { return matmul(a, Trans::no, b, Trans::no); }

/// Row-wise l2 normalization. Returns the number of rows that hit the norm floor.
std::size_t normalize_rows(Tensor& x);
void softmax_rows(Tensor& x);
void log_softmax_rows(Tensor& x);

namespace serial {

[[nodiscard]] Tensor matmul(const Tensor& a, Trans ta, const Tensor& b, Trans tb);
std::size_t normalize_rows(Tensor& x);
void softmax_rows(Tensor& x);
void log_softmax_rows(Tensor& x);

} // namespace serial

/// Output shape of op(a) * op(b); throws std::invalid_argument on mismatch.
[[nodiscard]] std::vector<std::size_t> matmul_shape(const Tensor& a, Trans ta, const Tensor& b, Trans tb);

/// Process-wide count of rows that hit the norm floor in normalize_rows.
[[nodiscard]] std::size_t degenerate_events() noexcept;
void reset_degenerate_events() noexcept;

/// Threads OpenMP would use for a parallel region here (1 without OpenMP).
[[nodiscard]] int max_threads();
void set_threads(int n);

} // namespace segp::kernels
