// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/dataset.hpp"
#include "segp/model.hpp"
#include "segp/prototype_bank.hpp"
#include "segp/tensor.hpp"

#include <cstddef>
#include <map>
#include <span>
#include <vector>

namespace segp {

struct DpgdConfig {
    double epsilon = 4.0 / 255.0; // l-inf budget
    double step_size = 1.5e-3;
    std::size_t iterations = 10;
    double visual_weight = 0.5; // weight of the raw-space prototype term
    std::size_t seeds_per_class = 5;
    double temperature = 0.07;

    void validate() const;
};

struct Seed {
    std::size_t sample_index = 0;
    Tensor x;
    int true_class = 0;
    int target_class = 0;
    double score = 0.0;
};

struct Anchor {
    Tensor x_adv;
    Tensor delta;
    int target_class = 0;
    Seed origin;
};

struct AnchorSet {
    std::vector<Anchor> anchors; // grouped by target class, classes ascending

    [[nodiscard]] bool empty() const noexcept { return anchors.empty(); }
    [[nodiscard]] std::size_t size() const noexcept { return anchors.size(); }
    [[nodiscard]] std::vector<const Anchor*> for_class(int class_id) const;
    [[nodiscard]] std::vector<int> target_classes() const;
    /// x_adv stacked one per row.
    [[nodiscard]] Tensor inputs() const;
};

/// Teacher cosine v̄(x)·u_c.
[[nodiscard]] double seed_score(const Snapshot& teacher, const Tensor& x, int class_id);

/// Top-k samples per old class by seed_score (ties to the lower index). A
/// sample may seed several classes. Empty old-class set gives an empty map.
[[nodiscard]] std::map<int, std::vector<Seed>> select_seeds(const Snapshot& teacher, const Dataset& data,
                                                            std::span<const int> old_classes, std::size_t k);

/// Teacher probability of class c over the old classes at temperature tau.
[[nodiscard]] double target_probability(const Snapshot& teacher, const Tensor& x, int class_id,
                                        std::span<const int> old_classes, double tau);

/// -log of the teacher softmax at c over the old classes.
[[nodiscard]] double adv_loss(const Snapshot& teacher, const Tensor& x, int class_id,
                              std::span<const int> old_classes, double tau);

/// 1 - r̄(x)·μ_c under the teacher.
[[nodiscard]] double visual_anchor_loss(const Snapshot& teacher, const Tensor& x, int class_id,
                                        const PrototypeBank& prototypes);

/// adv_loss + visual_weight * visual_anchor_loss.
[[nodiscard]] double dual_objective(const Snapshot& teacher, const Tensor& x, int class_id,
                                    std::span<const int> old_classes, const PrototypeBank& prototypes,
                                    const DpgdConfig& config);

/// Componentwise clamp to [-eps, eps].
[[nodiscard]] Tensor project_linf(Tensor delta, double epsilon);

/// Batched dual objective over rows of (seeds + delta), each row with its own
/// target class. Rows do not interact, so the gradient row i is exactly the
/// gradient of row i's own objective.
class DualObjective {
public:
    DualObjective(const Snapshot& teacher, std::span<const int> old_classes, const PrototypeBank& prototypes,
                  const DpgdConfig& config);

    struct Result {
        double value;
        Tensor gradient; // d value / d delta, same shape as delta
    };

    [[nodiscard]] Result evaluate(const Tensor& seeds, const Tensor& delta, std::span<const int> targets) const;

private:
    const Snapshot* teacher_;
    std::vector<int> old_classes_;
    const PrototypeBank* prototypes_;
    DpgdConfig config_;
    grad::Graph graph_;
    grad::NodeRef loss_{};
    grad::Bindings base_;
};

/// delta' = project(delta - step * sign(grad)) with sign(0) = 0. Works on one
/// rank-1 delta or a batch of rows.
[[nodiscard]] Tensor sign_step(const Tensor& delta, const Tensor& gradient, double step, double epsilon);

/// One DPGD update for a single seed.
[[nodiscard]] Tensor pgd_step(const Snapshot& teacher, const Seed& seed, const Tensor& delta,
                              std::span<const int> old_classes, const PrototypeBank& prototypes,
                              const DpgdConfig& config);

/// Seeds from `data`, then `iterations` DPGD steps from delta = 0 for every
/// (old class, seed) pair. Target classes are processed in parallel.
[[nodiscard]] AnchorSet build_anchor_set(const Snapshot& teacher, const Dataset& data,
                                         std::span<const int> old_classes, const PrototypeBank& prototypes,
                                         const DpgdConfig& config);

} // namespace segp
