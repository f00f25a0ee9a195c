// SPDX-License-Identifier: Apache-2.0

#include "segp/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace segp::kernels {

namespace {

std::atomic<std::size_t> g_degenerate{0};

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 14;

struct MatView {
    const double* data;
    std::size_t rows; // logical rows after transpose
    std::size_t cols;
    std::size_t stride;
    bool transposed;

    [[nodiscard]] double operator()(std::size_t r, std::size_t c) const noexcept
    {
        return transposed ? data[c * stride + r] : data[r * stride + c];
    }
};

MatView view(const Tensor& t, Trans tr)
{
    const std::size_t r = t.rows();
    const std::size_t c = t.cols();
    if (tr == Trans::yes) {
        return {t.data().data(), c, r, c, true};
    }
    return {t.data().data(), r, c, c, false};
}

// One output row of C = A * B with k ascending per element.
inline void matmul_row(const MatView& a, const MatView& b, std::size_t i, double* out)
{
    const std::size_t n = b.cols;
    std::fill(out, out + n, 0.0);
    for (std::size_t k = 0; k < a.cols; ++k) {
        const double aik = a(i, k);
        if (b.transposed) {
            for (std::size_t j = 0; j < n; ++j) {
                out[j] += aik * b.data[j * b.stride + k];
            }
        } else {
            const double* brow = b.data + k * b.stride;
            for (std::size_t j = 0; j < n; ++j) {
                out[j] += aik * brow[j];
            }
        }
    }
}

inline bool normalize_row(std::span<double> row)
{
    double sq = 0.0;
    for (double v : row) {
        sq += v * v;
    }
    const double norm = std::sqrt(sq);
    const bool degenerate = norm < kNormFloor;
    const double inv = 1.0 / (degenerate ? kNormFloor : norm);
    for (double& v : row) {
        v *= inv;
    }
    return degenerate;
}

inline void softmax_row(std::span<double> row)
{
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : row) {
        v /= z;
    }
}

inline void log_softmax_row(std::span<double> row)
{
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) {
        z += std::exp(v - mx);
    }
    const double lse = mx + std::log(z);
    for (double& v : row) {
        v -= lse;
    }
}

} // namespace

std::vector<std::size_t> matmul_shape(const Tensor& a, Trans ta, const Tensor& b, Trans tb)
{
    if (a.rank() == 0 || b.rank() == 0) {
        throw std::invalid_argument("matmul of a scalar");
    }
    const MatView av = view(a, ta);
    const MatView bv = view(b, tb);
    if (av.cols != bv.rows) {
        throw std::invalid_argument("matmul inner dimensions " + std::to_string(av.cols) + " vs "
                                    + std::to_string(bv.rows));
    }
    if (a.rank() == 1 && ta == Trans::no) {
        return {bv.cols};
    }
    return {av.rows, bv.cols};
}

Tensor matmul(const Tensor& a, Trans ta, const Tensor& b, Trans tb)
{
    Tensor out(matmul_shape(a, ta, b, tb));
    const MatView av = view(a, ta);
    const MatView bv = view(b, tb);
    const std::size_t m = av.rows;
    const std::size_t n = bv.cols;
    const bool parallel = m > 1 && m * n * av.cols >= kParallelWork;
    double* c = out.data().data();
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (parallel)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        matmul_row(av, bv, static_cast<std::size_t>(i), c + static_cast<std::size_t>(i) * n);
    }
    return out;
}

std::size_t normalize_rows(Tensor& x)
{
    const auto rows = static_cast<std::ptrdiff_t>(x.rows());
    const bool parallel = x.size() >= kParallelWork;
    std::size_t degenerate = 0;
#pragma omp parallel for schedule(static) reduction(+ : degenerate) if (parallel)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        degenerate += normalize_row(x.row(static_cast<std::size_t>(r))) ? 1 : 0;
    }
    g_degenerate += degenerate;
    return degenerate;
}

void softmax_rows(Tensor& x)
{
    const auto rows = static_cast<std::ptrdiff_t>(x.rows());
    const bool parallel = x.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        softmax_row(x.row(static_cast<std::size_t>(r)));
    }
}

void log_softmax_rows(Tensor& x)
{
    const auto rows = static_cast<std::ptrdiff_t>(x.rows());
    const bool parallel = x.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        log_softmax_row(x.row(static_cast<std::size_t>(r)));
    }
}

namespace serial {

Tensor matmul(const Tensor& a, Trans ta, const Tensor& b, Trans tb)
{
    Tensor out(matmul_shape(a, ta, b, tb));
    const MatView av = view(a, ta);
    const MatView bv = view(b, tb);
    for (std::size_t i = 0; i < av.rows; ++i) {
        for (std::size_t j = 0; j < bv.cols; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < av.cols; ++k) {
                s += av(i, k) * bv(k, j);
            }
            out[i * bv.cols + j] = s;
        }
    }
    return out;
}

std::size_t normalize_rows(Tensor& x)
{
    std::size_t degenerate = 0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        degenerate += normalize_row(x.row(r)) ? 1 : 0;
    }
    g_degenerate += degenerate;
    return degenerate;
}

void softmax_rows(Tensor& x)
{
    for (std::size_t r = 0; r < x.rows(); ++r) {
        softmax_row(x.row(r));
    }
}

void log_softmax_rows(Tensor& x)
{
    for (std::size_t r = 0; r < x.rows(); ++r) {
        log_softmax_row(x.row(r));
    }
}

} // namespace serial

std::size_t degenerate_events() noexcept { return g_degenerate.load(); }
void reset_degenerate_events() noexcept { g_degenerate = 0; }

int max_threads()
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n)
{
#ifdef _OPENMP
    omp_set_num_threads(std::max(1, n));
#else
    (void)n;
#endif
}

} // namespace segp::kernels
