// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include "segp/anchor.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace segp;

namespace {

Dataset labelled_noise(std::uint64_t seed, std::size_t n, std::size_t dim, int classes)
{
    Rng rng(seed, "data");
    Dataset d;
    d.inputs = test::random_matrix(rng, n, dim, 0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        d.labels.push_back(classes + static_cast<int>(i % 2));
    }
    return d;
}

PrototypeBank bank_for(const DualTowerModel& m, std::span<const int> classes, std::uint64_t seed)
{
    Rng rng(seed, "bank");
    PrototypeBank bank;
    for (int c : classes) {
        bank.set(c, m.encode_raw(test::random_vector(rng, m.config().input_dim, 0.0, 1.0)));
    }
    return bank;
}

} // namespace

TEST_SUITE("anchorforge") {

TEST_CASE("seed score is the teacher cosine")
{
    const auto m = test::toy_model(1, 4);
    const Snapshot t = m.take_snapshot();
    Rng rng(1, "x");
    for (int i = 0; i < 10; ++i) {
        const Tensor x = test::random_vector(rng, m.config().input_dim, 0.0, 1.0);
        const Tensor v = m.encode_visual(x);
        for (int c = 0; c < 4; ++c) {
            double s = 0.0;
            const Tensor u = m.encode_text(c);
            for (std::size_t k = 0; k < v.size(); ++k) {
                s += v[k] * u[k];
            }
            CHECK(std::abs(seed_score(t, x, c) - s) < 1e-14);
            CHECK(std::abs(seed_score(t, x, c)) <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("seed selection matches a full sort")
{
    const auto m = test::toy_model(2, 4);
    const Snapshot t = m.take_snapshot();
    const Dataset d = labelled_noise(2, 50, m.config().input_dim, 4);
    const std::vector<int> old = {0, 1, 2, 3};
    const auto seeds = select_seeds(t, d, old, 5);
    REQUIRE(seeds.size() == 4);
    for (int c : old) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t i = 0; i < d.size(); ++i) {
            all.emplace_back(-seed_score(t, d.sample(i), c), i);
        }
        std::sort(all.begin(), all.end());
        const auto& got = seeds.at(c);
        REQUIRE(got.size() == 5);
        for (std::size_t k = 0; k < 5; ++k) {
            CHECK(got[k].sample_index == all[k].second);
            CHECK(got[k].target_class == c);
            CHECK(got[k].true_class == d.labels[all[k].second]);
        }
    }

    // K equal to the task size takes everything.
    const auto every = select_seeds(t, d, old, d.size());
    for (const auto& [c, list] : every) {
        CHECK(list.size() == d.size());
    }
    CHECK(select_seeds(t, d, std::span<const int>{}, 5).empty());
    CHECK_THROWS((void)select_seeds(t, d, old, d.size() + 1));
}

TEST_CASE("adversarial loss")
{
    auto m = test::toy_model(3, 3);
    Rng rng(3, "x");
    const Tensor x = test::random_vector(rng, m.config().input_dim, 0.0, 1.0);

    const int one[] = {1};
    CHECK(adv_loss(m.take_snapshot(), x, 1, one, 0.07) == 0.0);

    m.register_class(7, m.token(2));
    const int twins[] = {2, 7};
    CHECK(std::abs(adv_loss(m.take_snapshot(), x, 2, twins, 0.07) - std::numbers::ln2) < 1e-14);

    const Snapshot t = m.take_snapshot();
    const std::vector<int> three = {0, 1, 2};
    const Tensor logits = m.clip_logits(x, three);
    double z = 0.0;
    for (double l : logits.data()) {
        z += std::exp(l / 0.07);
    }
    for (std::size_t c = 0; c < 3; ++c) {
        const double want = -std::log(std::exp(logits[c] / 0.07) / z);
        CHECK(std::abs(adv_loss(t, x, three[c], three, 0.07) - want) < 1e-12);
        CHECK(adv_loss(t, x, three[c], three, 0.07) >= 0.0);
    }
    CHECK_THROWS_AS((void)adv_loss(t, x, 5, three, 0.07), std::invalid_argument);
}

TEST_CASE("visual anchoring term")
{
    const auto m = test::toy_model(4, 2);
    const Snapshot t = m.take_snapshot();
    Rng rng(4, "x");
    const Tensor x = test::random_vector(rng, m.config().input_dim, 0.0, 1.0);
    const Tensor r = m.encode_raw(x);
    Tensor neg = r;
    for (double& v : neg.data()) {
        v = -v;
    }
    PrototypeBank bank;
    bank.set(0, r);
    bank.set(1, neg);
    CHECK(std::abs(visual_anchor_loss(t, x, 0, bank)) < 1e-14);
    CHECK(std::abs(visual_anchor_loss(t, x, 1, bank) - 2.0) < 1e-14);
    CHECK_THROWS_AS((void)visual_anchor_loss(t, x, 3, bank), std::out_of_range);

    const PrototypeBank random_bank = bank_for(m, std::vector<int>{0}, 4);
    const double want = 1.0 - dot(r.data(), random_bank.at(0).data());
    CHECK(std::abs(visual_anchor_loss(t, x, 0, random_bank) - want) < 1e-14);
}

TEST_CASE("dual objective is the weighted sum of its terms")
{
    const auto m = test::toy_model(5, 4);
    const Snapshot t = m.take_snapshot();
    const std::vector<int> old = {0, 1, 2, 3};
    const PrototypeBank bank = bank_for(m, old, 5);
    Rng rng(5, "x");
    DpgdConfig c;
    for (int i = 0; i < 10; ++i) {
        const Tensor x = test::random_vector(rng, m.config().input_dim, 0.0, 1.0);
        const int cls = i % 4;
        c.visual_weight = 0.0;
        CHECK(dual_objective(t, x, cls, old, bank, c) == adv_loss(t, x, cls, old, c.temperature));
        c.visual_weight = 0.5;
        const double want = adv_loss(t, x, cls, old, c.temperature) + 0.5 * visual_anchor_loss(t, x, cls, bank);
        CHECK(std::abs(dual_objective(t, x, cls, old, bank, c) - want) < 1e-12);
    }
}

TEST_CASE("batched objective agrees with the scalar form and its finite differences")
{
    const auto m = test::toy_model(6, 4);
    const Snapshot t = m.take_snapshot();
    const std::vector<int> old = {0, 1, 2, 3};
    const PrototypeBank bank = bank_for(m, old, 6);
    DpgdConfig c;
    const DualObjective obj(t, old, bank, c);
    Rng rng(6, "x");
    const Tensor seeds = test::random_matrix(rng, 4, m.config().input_dim, 0.0, 1.0);
    const Tensor delta = test::random_matrix(rng, 4, m.config().input_dim, -c.epsilon, c.epsilon);
    const std::vector<int> targets = {0, 3, 1, 1};
    const auto res = obj.evaluate(seeds, delta, targets);

    double total = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        Tensor x = seeds.row_tensor(i);
        for (std::size_t k = 0; k < x.size(); ++k) {
            x[k] += delta.at(i, k);
        }
        total += dual_objective(t, x, targets[i], old, bank, c);

        // Row i of the gradient is the gradient of row i's own objective.
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double h = 1e-6;
            Tensor up = x;
            Tensor down = x;
            up[k] += h;
            down[k] -= h;
            const double numeric = (dual_objective(t, up, targets[i], old, bank, c)
                                    - dual_objective(t, down, targets[i], old, bank, c))
                                   / (2.0 * h);
            const double analytic = res.gradient.at(i, k);
            CHECK(std::abs(numeric - analytic) <= 1e-5 * std::max(1.0, std::abs(analytic)));
        }
    }
    CHECK(std::abs(res.value - total) < 1e-11);
}

TEST_CASE("projection onto the l-inf ball")
{
    const double eps = 0.1;
    const Tensor inside = Tensor::vector({0.05, -0.1, 0.0});
    CHECK(project_linf(inside, eps) == inside);
    const Tensor out = project_linf(Tensor::vector({2 * eps, -3 * eps}), eps);
    CHECK(out == Tensor::vector({eps, -eps}));
    CHECK_THROWS((void)project_linf(inside, 0.0));
}

TEST_CASE("sign step")
{
    const Tensor delta = Tensor::vector({0.001, -0.002, 0.0});
    CHECK(sign_step(delta, Tensor::vector({0.0, 0.0, 0.0}), 0.01, 0.1) == delta);
    const Tensor next = sign_step(delta, Tensor::vector({1.0, -2.0, 0.0}), 0.01, 0.1);
    CHECK(next[0] == doctest::Approx(0.001 - 0.01));
    CHECK(next[1] == doctest::Approx(-0.002 + 0.01));
    CHECK(next[2] == 0.0);
}

TEST_CASE("anchor sets")
{
    const auto m = test::toy_model(7, 6);
    const Snapshot t = m.take_snapshot();
    const std::vector<int> old = {0, 1, 2, 3};
    const PrototypeBank bank = bank_for(m, old, 7);
    const Dataset d = labelled_noise(7, 30, m.config().input_dim, 4);
    DpgdConfig c;

    const AnchorSet a = build_anchor_set(t, d, old, bank, c);
    CHECK(a.size() == old.size() * 5);
    CHECK(a.target_classes() == old);
    for (const auto& anchor : a.anchors) {
        CHECK(linf_norm(anchor.delta.data()) <= c.epsilon);
        for (std::size_t k = 0; k < anchor.x_adv.size(); ++k) {
            CHECK(anchor.x_adv[k] == anchor.origin.x[k] + anchor.delta[k]);
        }
    }
    CHECK(a.for_class(2).size() == 5);

    // Deterministic, and independent of thread count.
    const AnchorSet again = build_anchor_set(t, d, old, bank, c);
    const int saved = kernels::max_threads();
    kernels::set_threads(3);
    const AnchorSet threaded = build_anchor_set(t, d, old, bank, c);
    kernels::set_threads(saved);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.anchors[i].x_adv == again.anchors[i].x_adv);
        CHECK(a.anchors[i].x_adv == threaded.anchors[i].x_adv);
    }

    // Zero iterations leaves the seeds untouched.
    c.iterations = 0;
    for (const auto& anchor : build_anchor_set(t, d, old, bank, c).anchors) {
        CHECK(anchor.x_adv == anchor.origin.x);
        CHECK(linf_norm(anchor.delta.data()) == 0.0);
    }
    CHECK(build_anchor_set(t, d, std::span<const int>{}, bank, c).empty());
}

TEST_CASE("more iterations raise the target probability on average")
{
    const auto m = test::toy_model(8, 4);
    const Snapshot t = m.take_snapshot();
    const std::vector<int> old = {0, 1, 2, 3};
    const PrototypeBank bank = bank_for(m, old, 8);
    const Dataset d = labelled_noise(8, 40, m.config().input_dim, 4);
    DpgdConfig c;
    c.visual_weight = 0.0;
    double previous = -1.0;
    for (std::size_t k : {0, 5, 10}) {
        c.iterations = k;
        const AnchorSet a = build_anchor_set(t, d, old, bank, c);
        double mean = 0.0;
        for (const auto& anchor : a.anchors) {
            mean += target_probability(t, anchor.x_adv, anchor.target_class, old, c.temperature);
        }
        mean /= static_cast<double>(a.size());
        CHECK(mean >= previous);
        previous = mean;
    }
}

} // TEST_SUITE
