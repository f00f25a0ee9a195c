// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/anchor.hpp"
#include "segp/dataset.hpp"
#include "segp/graph.hpp"
#include "segp/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace segp {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 128;
    std::size_t anchor_batch_size = 32;
    double learning_rate = 1e-3;
    bool cosine_decay = true;
    double acgd_weight = 5.0;
    double gr_weight = 1.0;
    double acgd_temperature = 20.0; // tau_A
    double text_temperature = 0.05; // tau_T
    std::size_t neighbors = 10;     // k of the text subgraphs
    double temperature = 0.07;      // classification tau

    void validate() const;
};

/// k-NN neighbourhood of a new class in the adapter-free text space, with the
/// reference similarity distribution over it. Frozen for the whole task.
struct TextSubgraph {
    int root = 0;
    std::vector<int> neighbors; // most similar first
    std::vector<double> reference;
};

struct LossTerms {
    double cls = 0.0;
    double acgd = 0.0;
    double tsgr = 0.0;
    double total = 0.0;
};

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    LossTerms loss;
    double lr = 0.0;
};

/// KL(p || q) in nats with 0 log 0 = 0 and q floored at 1e-12.
[[nodiscard]] double kl_divergence(std::span<const double> p, std::span<const double> q);

// Reference (non-graph) forms of each loss term. They share no code with the
// graph objective below, which makes them usable as its oracle.

/// Mean -log p_clip(y|x) with the softmax restricted to `classes`.
[[nodiscard]] double loss_cls(const DualTowerModel& model, const Dataset& batch, std::span<const int> classes,
                              double tau);

/// tau_A^2 * mean over anchors of KL(teacher || student) over the old classes,
/// both distributions being softmax(logit_scale * cosine / tau_A); 0 when
/// there are no old classes. Training uses logit_scale = 1 / tau, i.e. it
/// softens the same logits the classifier sees.
[[nodiscard]] double loss_acgd(const DualTowerModel& student, const Snapshot& teacher, const Tensor& anchor_inputs,
                               std::span<const int> old_classes, double tau_a, double logit_scale = 1.0);

/// Neighbourhoods for each new class under the reference text tower; empty when fewer than two classes are seen.
[[nodiscard]] std::vector<TextSubgraph> build_text_subgraphs(const Snapshot& reference,
                                                             std::span<const int> new_classes,
                                                             std::span<const int> seen_classes, std::size_t k,
                                                             double tau_t);

/// Mean over subgraphs of KL(reference || student) on the frozen neighbour sets.
[[nodiscard]] double loss_tsgr(const DualTowerModel& student, std::span<const TextSubgraph> subgraphs,
                               double tau_t);

/// Everything one task's objective needs besides the student itself.
struct TaskContext {
    std::vector<int> task_classes;
    std::vector<int> old_classes;
    std::vector<int> seen_classes; // old then new, ascending within each
    const Snapshot* teacher = nullptr;
    std::vector<TextSubgraph> subgraphs;
    bool use_acgd = true;
    bool use_tsgr = true;
};

/// Weighted sum of the reference loss terms.
[[nodiscard]] LossTerms total_loss(const DualTowerModel& student, const Dataset& batch, const Tensor& anchor_inputs,
                                   const TaskContext& context, const TrainConfig& config);

/// Graph form of the task objective with adapter up-projections as the only parameters.
class TaskObjective {
public:
    TaskObjective(const TaskContext& context, const TrainConfig& config, bool anchors_available);

    struct Result {
        LossTerms loss;
        grad::Gradients gradients; // keyed "s.visual.up", "s.text.up"
    };

    [[nodiscard]] Result evaluate(const DualTowerModel& student, const Dataset& batch,
                                  const Tensor& anchor_inputs) const;

    [[nodiscard]] const grad::Graph& graph() const noexcept { return graph_; }
    /// Bindings for a given step (exposed for gradient checking).
    [[nodiscard]] grad::Bindings bindings(const DualTowerModel& student, const Dataset& batch,
                                          const Tensor& anchor_inputs) const;
    [[nodiscard]] grad::NodeRef root() const noexcept { return total_; }

private:
    const TaskContext* context_;
    TrainConfig config_;
    bool acgd_active_;
    bool tsgr_active_;
    grad::Graph graph_;
    grad::NodeRef cls_{}, acgd_{}, tsgr_{}, total_{};
    Tensor tsgr_roots_, tsgr_mask_, tsgr_reference_, tsgr_log_reference_;
};

struct TrainResult {
    std::vector<StepRecord> history;
};

/// SGD with cosine decay over epochs x batches; each step draws one data
/// batch and one anchor batch. Only the adapter up-projections change.
TrainResult train_task(DualTowerModel& model, const Dataset& data, const AnchorSet& anchors,
                       const TaskContext& context, const TrainConfig& config, std::uint64_t seed);

/// lr at `step` of `total` steps.
[[nodiscard]] double scheduled_lr(const TrainConfig& config, std::size_t step, std::size_t total);

/// CSV with header step,epoch,loss_cls,loss_acgd,loss_tsgr,loss_total,lr.
void write_loss_csv(std::ostream& out, std::span<const StepRecord> history);

} // namespace segp
