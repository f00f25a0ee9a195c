// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include "segp/kernels.hpp"
#include "segp/protopath.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace segp;

namespace {

Dataset labelled(std::uint64_t seed, std::size_t n, std::size_t dim, std::span<const int> classes)
{
    Rng rng(seed, "data");
    Dataset d;
    d.inputs = test::random_matrix(rng, n, dim, 0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        d.labels.push_back(classes[i % classes.size()]);
    }
    return d;
}

} // namespace

TEST_SUITE("protopath") {

TEST_CASE("new-class prototypes")
{
    const auto m = test::toy_model(1, 2);
    const std::vector<int> classes = {0, 1};

    const Dataset one = labelled(1, 2, m.config().input_dim, classes);
    const auto single = estimate_new_prototypes(m, one, classes);
    Tensor expected = m.encode_raw(one.sample(0));
    kernels::normalize_rows(expected);
    CHECK(single.at(0) == expected);

    const std::size_t idx[] = {0, 0, 1};
    const auto doubled = estimate_new_prototypes(m, one.subset(idx), classes);
    for (std::size_t k = 0; k < doubled.at(0).size(); ++k) {
        CHECK(std::abs(doubled.at(0)[k] - single.at(0)[k]) < 1e-15);
    }

    // Mean-then-normalize oracle.
    const Dataset many = labelled(2, 40, m.config().input_dim, classes);
    const auto protos = estimate_new_prototypes(m, many, classes);
    for (int c : classes) {
        std::vector<double> mean(m.config().raw_dim, 0.0);
        for (std::size_t i = 0; i < many.size(); ++i) {
            if (many.labels[i] == c) {
                const Tensor r = m.encode_raw(many.sample(i));
                for (std::size_t k = 0; k < mean.size(); ++k) {
                    mean[k] += r[k] / 20.0;
                }
            }
        }
        const Tensor want = test::unit(mean);
        for (std::size_t k = 0; k < mean.size(); ++k) {
            CHECK(std::abs(protos.at(c)[k] - want[k]) < 1e-12);
        }
        CHECK(std::abs(l2_norm(protos.at(c).data()) - 1.0) < 1e-12);
    }

    const std::vector<int> missing = {0, 5};
    CHECK_THROWS_AS((void)estimate_new_prototypes(m, many, missing), std::invalid_argument);
}

TEST_CASE("anchor displacements")
{
    const auto m = test::toy_model(3, 2);
    Rng rng(3, "x");
    const Tensor x = test::random_matrix(rng, 6, m.config().input_dim, 0.0, 1.0);
    const Snapshot teacher = m.take_snapshot();
    const Tensor still = anchor_displacements(teacher, m, x);
    for (double v : still.data()) {
        CHECK(v == 0.0);
    }

    auto moved = m;
    for (double& v : moved.visual().adapter.up.data()) {
        v += rng.uniform(-1.0, 1.0);
    }
    const Tensor d = anchor_displacements(teacher, moved, x);
    const Tensor before = m.encode_raw(x);
    const Tensor after = moved.encode_raw(x);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        CHECK(l2_norm(d.row(i)) <= 2.0 + 1e-12);
        for (std::size_t k = 0; k < d.cols(); ++k) {
            CHECK(d.at(i, k) == after.at(i, k) - before.at(i, k));
        }
    }
}

TEST_CASE("reliability weights, drift and gate")
{
    const auto m = test::toy_model(4, 2);
    const Snapshot t = m.take_snapshot();
    Rng rng(4, "x");
    const Tensor x = test::random_matrix(rng, 2, m.config().input_dim, 0.0, 1.0);
    const Tensor r = m.encode_raw(x);
    const Tensor mu = r.row_tensor(0);

    const Tensor first = Tensor::matrix(1, x.cols(), std::vector<double>(x.row(0).begin(), x.row(0).end()));
    const Reliability single = reliability_weights(t, first, mu);
    CHECK(single.weights == std::vector<double>{1.0});
    CHECK(proximity_gate(t, first, mu) == doctest::Approx(1.0).epsilon(1e-14));

    // Same input twice: equal scores, uniform weights.
    const Tensor pair = Tensor::stack_rows(std::vector<Tensor>{first.row_tensor(0), first.row_tensor(0)});
    CHECK(reliability_weights(t, pair, mu).weights == std::vector<double>{0.5, 0.5});

    // Scores and weights against direct cosines.
    const Reliability rel = reliability_weights(t, x, mu);
    const double a0 = dot(r.row(0), mu.data());
    const double a1 = dot(r.row(1), mu.data());
    CHECK(rel.scores[1] == doctest::Approx(a1).epsilon(1e-14));
    CHECK(rel.weights[0] == doctest::Approx(a0 / (a0 + a1)).epsilon(1e-14));
    CHECK_FALSE(rel.fallback);
    CHECK(proximity_gate(t, x, mu) == doctest::Approx((a0 + a1) / 2.0).epsilon(1e-14));

    // A prototype opposite to every anchor makes Σa negative: uniform fallback.
    Tensor anti = mu;
    for (double& v : anti.data()) {
        v = -v;
    }
    const Reliability fb = reliability_weights(t, pair, anti);
    CHECK(fb.fallback);
    CHECK(fb.weights == std::vector<double>{0.5, 0.5});

    // class_drift: zero, single and hand-set pairs.
    const Tensor zero = Tensor::zeros(2, 3);
    const double w2[] = {0.8, 0.2};
    CHECK(class_drift(zero, w2) == Tensor({3}));
    const Tensor d1 = Tensor::matrix({{0.1, -0.2, 0.3}});
    const double w1[] = {1.0};
    CHECK(class_drift(d1, w1) == Tensor::vector({0.1, -0.2, 0.3}));
    const Tensor d2 = Tensor::matrix({{1.0, 0.0, -1.0}, {0.0, 2.0, 1.0}});
    const Tensor got = class_drift(d2, w2);
    CHECK(got[0] == doctest::Approx(0.8));
    CHECK(got[1] == doctest::Approx(0.4));
    CHECK(got[2] == doctest::Approx(-0.6));
    CHECK_THROWS_AS((void)class_drift(d2, w1), std::invalid_argument);
}

TEST_CASE("gate from mixed cosines")
{
    // Anchors whose raw features sit at the prototype and orthogonal to it.
    const auto m = test::toy_model(5, 2);
    const Snapshot t = m.take_snapshot();
    Rng rng(5, "x");
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor x = test::random_matrix(rng, 2, m.config().input_dim, 0.0, 1.0);
        const Tensor r = m.encode_raw(x);
        // Orthogonal complement of r1 within span(r0, r1).
        std::vector<double> mu(r.cols());
        const double c = dot(r.row(0), r.row(1));
        for (std::size_t k = 0; k < mu.size(); ++k) {
            mu[k] = r.at(0, k) - c * r.at(1, k);
        }
        if (l2_norm(mu) < 1e-3) {
            continue;
        }
        const Tensor p = test::unit(mu);
        const double g = proximity_gate(t, x, p);
        CHECK(std::abs(dot(r.row(1), p.data())) < 1e-12);
        CHECK(g == doctest::Approx(dot(r.row(0), p.data()) / 2.0).epsilon(1e-12));
        break;
    }
}

TEST_CASE("prototype transfer")
{
    PrototypeBank bank;
    bank.set(0, Tensor::vector({1.0, 0.0}));
    bank.set(1, Tensor::vector({0.0, 1.0}));
    bank.set(2, Tensor::vector({0.6, 0.8}));

    std::map<int, ClassDrift> drifts;
    drifts[0] = ClassDrift{Tensor::vector({0.0, 1.0}), 1.0, Reliability{{1.0}, {1.0}, false}};
    drifts[1] = ClassDrift{Tensor::vector({0.5, 0.5}), 0.0, Reliability{{1.0}, {1.0}, false}};
    drifts[2] = ClassDrift{Tensor::vector({-0.6, -0.8}), 1.0, Reliability{{-1.0}, {1.0}, true}};
    std::map<int, Tensor> fresh;
    fresh[3] = Tensor::vector({-1.0, 0.0});

    const TransferReport rep = transfer_prototypes(bank, drifts, fresh, 2);
    CHECK(bank.at(0)[0] == doctest::Approx(1.0 / std::numbers::sqrt2).epsilon(1e-15));
    CHECK(bank.at(0)[1] == doctest::Approx(1.0 / std::numbers::sqrt2).epsilon(1e-15));
    CHECK(bank.at(1) == Tensor::vector({0.0, 1.0}));     // g = 0
    CHECK(bank.at(2) == Tensor::vector({0.6, 0.8}));     // degenerate, kept
    CHECK(rep.degenerate == std::vector<int>{2});
    CHECK(rep.weight_fallbacks == std::vector<int>{2});
    CHECK(bank.at(3) == Tensor::vector({-1.0, 0.0}));
    CHECK(bank.version() == 2);

    // Zero drift keeps every bit.
    PrototypeBank odd;
    odd.set(0, test::unit({0.3, 0.1, -0.7}));
    const PrototypeBank saved = odd;
    std::map<int, ClassDrift> still;
    still[0] = ClassDrift{Tensor({3}), 0.9, Reliability{{1.0}, {1.0}, false}};
    (void)transfer_prototypes(odd, still, {}, 1);
    CHECK(odd.at(0) == saved.at(0));
}

TEST_CASE("estimated drift is zero for an unchanged model")
{
    const auto m = test::toy_model(6, 4);
    const Snapshot t = m.take_snapshot();
    const std::vector<int> old = {0, 1};
    const Dataset d = labelled(6, 20, m.config().input_dim, std::vector<int>{2, 3});
    PrototypeBank bank;
    for (int c : old) {
        bank.set(c, m.encode_raw(d.sample(static_cast<std::size_t>(c))));
    }
    const AnchorSet anchors = build_anchor_set(t, d, old, bank, DpgdConfig{});
    const auto drifts = estimate_drift(t, m, anchors, bank);
    CHECK(drifts.size() == 2);
    const PrototypeBank before = bank;
    (void)transfer_prototypes(bank, drifts, {}, 1);
    for (int c : old) {
        CHECK(bank.at(c) == before.at(c));
    }
}

TEST_CASE("dual-path prediction")
{
    const auto m = test::toy_model(7, 4);
    const std::vector<int> classes = {0, 1, 2, 3};
    Rng rng(7, "x");
    PrototypeBank bank;
    for (int c : classes) {
        bank.set(c, m.encode_raw(test::random_vector(rng, m.config().input_dim, 0.0, 1.0)));
    }
    const Tensor xs = test::random_matrix(rng, 30, m.config().input_dim, 0.0, 1.0);
    const auto batch = dual_path_predict_batch(m, bank, xs, classes, 0.5);
    const auto clip_only = clip_predict_batch(m, xs, classes);
    for (std::size_t i = 0; i < xs.rows(); ++i) {
        const Tensor x = xs.row_tensor(i);
        const Prediction p = dual_path_predict(m, bank, x, classes, 0.5);
        const Tensor logits = m.clip_logits(x, classes);
        const Tensor r = m.encode_raw(x);
        std::size_t best = 0;
        for (std::size_t c = 0; c < 4; ++c) {
            const double want = logits[c] + 0.5 * dot(r.data(), bank.at(classes[c]).data());
            CHECK(std::abs(p.fused[c] - want) < 1e-14);
            if (p.fused[c] > p.fused[best]) {
                best = c;
            }
        }
        CHECK(p.predicted == classes[best]);
        CHECK(batch[i].predicted == p.predicted);
        CHECK(batch[i].fused == p.fused);

        // beta = 0 reduces to the CLIP argmax.
        CHECK(dual_path_predict(m, bank, x, classes, 0.0).predicted == clip_only[i]);
    }

    // Worked example: clip [0.9, 0.1], visual [0, 1], beta 0.5.
    const double clip[] = {0.9, 0.1};
    const double visual[] = {0.0, 1.0};
    const int two[] = {0, 1};
    const Prediction fused = fuse_logits(clip, visual, two, 0.5);
    CHECK(fused.fused[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(fused.fused[1] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(fused.predicted == 0);

    PrototypeBank partial;
    partial.set(0, bank.at(0));
    CHECK_THROWS_AS((void)dual_path_predict(m, partial, xs.row_tensor(0), classes, 0.5), std::out_of_range);
}

TEST_CASE("ties go to the smallest class id")
{
    auto m = test::toy_model(8, 1);
    m.register_class(5, m.token(0));
    m.register_class(3, m.token(0));
    PrototypeBank bank;
    const Tensor p = test::unit({1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    for (int c : {0, 3, 5}) {
        bank.set(c, p);
    }
    const std::vector<int> classes = {5, 3, 0};
    Rng rng(8, "x");
    const Tensor x = test::random_vector(rng, m.config().input_dim, 0.0, 1.0);
    CHECK(dual_path_predict(m, bank, x, classes, 0.5).predicted == 0);
    CHECK(clip_predict_batch(m, Tensor::matrix(1, x.size(), x.values()), classes)[0] == 0);
}

} // TEST_SUITE
