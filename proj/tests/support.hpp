// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/model.hpp"
#include "segp/rng.hpp"
#include "segp/tensor.hpp"

#include <cmath>
#include <numeric>
#include <vector>

namespace segp::test {

inline Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0)
{
    std::vector<double> v(rows * cols);
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    return Tensor::matrix(rows, cols, std::move(v));
}

inline Tensor random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0)
{
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    return Tensor::vector(std::move(v));
}

inline Tensor unit(std::vector<double> v)
{
    double n = 0.0;
    for (double x : v) {
        n += x * x;
    }
    n = std::sqrt(n);
    for (double& x : v) {
        x /= n;
    }
    return Tensor::vector(std::move(v));
}

inline ModelConfig small_config()
{
    ModelConfig c;
    c.input_dim = 6;
    c.raw_dim = 8;
    c.joint_dim = 5;
    c.hidden_dim = 7;
    c.lora_rank = 2;
    c.class_token_dim = 4;
    return c;
}

/// Random model with classes 0..classes-1 registered and random (non-zero) adapters.
inline DualTowerModel toy_model(std::uint64_t seed, int classes = 6, bool perturb_adapters = true,
                                ModelConfig config = small_config())
{
    auto m = DualTowerModel::initialize(config, seed);
    Rng rng(seed, "toy.tokens");
    for (int c = 0; c < classes; ++c) {
        m.register_class(c, random_vector(rng, config.class_token_dim));
    }
    if (perturb_adapters) {
        for (double& x : m.visual().adapter.up.data()) {
            x = rng.uniform(-0.3, 0.3);
        }
        for (double& x : m.text().adapter.up.data()) {
            x = rng.uniform(-0.3, 0.3);
        }
    }
    return m;
}

inline std::vector<int> iota_classes(int from, int to)
{
    std::vector<int> v(static_cast<std::size_t>(to - from));
    std::iota(v.begin(), v.end(), from);
    return v;
}

} // namespace segp::test
