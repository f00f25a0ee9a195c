// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include "segp/kernels.hpp"

#include <doctest.h>

#include <cmath>

using namespace segp;
using kernels::Trans;

namespace {

Tensor naive_matmul(const Tensor& a, Trans ta, const Tensor& b, Trans tb)
{
    const std::size_t n = ta == Trans::no ? a.rows() : a.cols();
    const std::size_t k = ta == Trans::no ? a.cols() : a.rows();
    const std::size_t m = tb == Trans::no ? b.cols() : b.rows();
    Tensor out = Tensor::zeros(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double x = ta == Trans::no ? a.at(i, p) : a.at(p, i);
                const double y = tb == Trans::no ? b.at(p, j) : b.at(j, p);
                s += x * y;
            }
            out.at(i, j) = s;
        }
    }
    return out;
}

struct ThreadGuard {
    int saved = kernels::max_threads();
    ~ThreadGuard() { kernels::set_threads(saved); }
};

} // namespace

TEST_SUITE("kernels") {

TEST_CASE("matmul matches a naive triple loop")
{
    Rng rng(1, "mm");
    for (auto ta : {Trans::no, Trans::yes}) {
        for (auto tb : {Trans::no, Trans::yes}) {
            const Tensor a = ta == Trans::no ? test::random_matrix(rng, 7, 5) : test::random_matrix(rng, 5, 7);
            const Tensor b = tb == Trans::no ? test::random_matrix(rng, 5, 9) : test::random_matrix(rng, 9, 5);
            const Tensor got = kernels::matmul(a, ta, b, tb);
            const Tensor want = naive_matmul(a, ta, b, tb);
            REQUIRE(got.same_shape(want));
            for (std::size_t i = 0; i < got.size(); ++i) {
                CHECK(std::abs(got[i] - want[i]) < 1e-13);
            }
        }
    }
}

TEST_CASE("rank-1 operand is a row vector")
{
    const Tensor x = Tensor::vector({1.0, 2.0});
    const Tensor w = Tensor::matrix({{1.0, 0.0, 1.0}, {0.0, 1.0, 1.0}});
    const Tensor y = kernels::matmul(x, w);
    CHECK(y.rank() == 1);
    CHECK(y == Tensor::vector({1.0, 2.0, 3.0}));
    CHECK_THROWS_AS((void)kernels::matmul(w, x), std::invalid_argument);
}

TEST_CASE("parallel kernels are bit-identical to the serial reference for any thread count")
{
    ThreadGuard guard;
    Rng rng(2, "par");
    const Tensor a = test::random_matrix(rng, 300, 40);
    const Tensor b = test::random_matrix(rng, 40, 33);
    const Tensor bt = test::random_matrix(rng, 33, 40);
    const Tensor ref_ab = kernels::serial::matmul(a, Trans::no, b, Trans::no);
    const Tensor ref_abt = kernels::serial::matmul(a, Trans::no, bt, Trans::yes);
    const Tensor ref_ata = kernels::serial::matmul(a, Trans::yes, a, Trans::no);
    Tensor ref_norm = a;
    Tensor ref_soft = a;
    Tensor ref_log = a;
    kernels::serial::normalize_rows(ref_norm);
    kernels::serial::softmax_rows(ref_soft);
    kernels::serial::log_softmax_rows(ref_log);

    for (int threads : {1, 2, 3, 8}) {
        CAPTURE(threads);
        kernels::set_threads(threads);
        CHECK(kernels::matmul(a, Trans::no, b, Trans::no) == ref_ab);
        CHECK(kernels::matmul(a, Trans::no, bt, Trans::yes) == ref_abt);
        CHECK(kernels::matmul(a, Trans::yes, a, Trans::no) == ref_ata);
        Tensor n = a;
        Tensor s = a;
        Tensor l = a;
        kernels::normalize_rows(n);
        kernels::softmax_rows(s);
        kernels::log_softmax_rows(l);
        CHECK(n == ref_norm);
        CHECK(s == ref_soft);
        CHECK(l == ref_log);
    }
}

TEST_CASE("softmax rows are distributions and log_softmax is their log")
{
    Rng rng(3, "soft");
    Tensor x = test::random_matrix(rng, 10, 6, -50.0, 50.0);
    Tensor s = x;
    Tensor l = x;
    kernels::softmax_rows(s);
    kernels::log_softmax_rows(l);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            CHECK(s.at(r, c) >= 0.0);
            total += s.at(r, c);
            CHECK(std::abs(std::exp(l.at(r, c)) - s.at(r, c)) < 1e-14);
        }
        CHECK(std::abs(total - 1.0) < 1e-14);
    }
    // Large logits do not overflow.
    Tensor big = Tensor::vector({1000.0, 1000.0});
    kernels::softmax_rows(big);
    CHECK(big == Tensor::vector({0.5, 0.5}));
}

TEST_CASE("normalize_rows counts rows at the norm floor")
{
    kernels::reset_degenerate_events();
    Tensor x = Tensor::matrix({{3.0, 4.0}, {0.0, 0.0}});
    CHECK(kernels::normalize_rows(x) == 1);
    CHECK(kernels::degenerate_events() == 1);
    CHECK(x.at(0, 0) == doctest::Approx(0.6));
    CHECK(x.at(1, 0) == 0.0);
    CHECK(x.all_finite());
}

} // TEST_SUITE
