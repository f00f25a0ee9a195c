// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/anchor.hpp"
#include "segp/dataset.hpp"
#include "segp/model.hpp"
#include "segp/prototype_bank.hpp"
#include "segp/tensor.hpp"

#include <map>
#include <span>
#include <vector>

namespace segp {

/// Normalized sum of unit raw features per class. Throws if a class has no samples.
[[nodiscard]] std::map<int, Tensor> estimate_new_prototypes(const DualTowerModel& model, const Dataset& data,
                                                            std::span<const int> classes);

/// d_t = r̄_t(x_adv) - r̄^T(x_adv), one row per anchor input row.
[[nodiscard]] Tensor anchor_displacements(const Snapshot& teacher, const DualTowerModel& model,
                                          const Tensor& anchor_inputs);

struct Reliability {
    std::vector<double> scores;  // a = r̄^T(x_adv)·μ
    std::vector<double> weights; // a / Σa, or uniform on fallback
    bool fallback = false;       // Σa <= 0
};

[[nodiscard]] Reliability reliability_weights(const Snapshot& teacher, const Tensor& anchor_inputs,
                                              const Tensor& prototype);

/// Σ_i w_i d_i.
[[nodiscard]] Tensor class_drift(const Tensor& displacements, std::span<const double> weights);

/// Unweighted mean teacher cosine between anchors and the prototype (not clipped).
[[nodiscard]] double proximity_gate(const Snapshot& teacher, const Tensor& anchor_inputs, const Tensor& prototype);

struct ClassDrift {
    Tensor displacement;
    double gate = 0.0;
    Reliability reliability;
};

/// Drift estimate for every old class that has anchors.
[[nodiscard]] std::map<int, ClassDrift> estimate_drift(const Snapshot& teacher, const DualTowerModel& model,
                                                       const AnchorSet& anchors, const PrototypeBank& bank);

struct TransferReport {
    std::vector<int> degenerate;         // kept their old prototype
    std::vector<int> weight_fallbacks;   // used uniform weights
};

/// μ_c <- normalize(μ_c + g_c Δ_c) for classes in `drifts`, then merges the new
/// prototypes and stamps `version`.
TransferReport transfer_prototypes(PrototypeBank& bank, const std::map<int, ClassDrift>& drifts,
                                   const std::map<int, Tensor>& new_prototypes, int version);

struct Prediction {
    std::vector<double> fused; // per class in `classes` order
    int predicted = 0;
};

/// Fused scores clip + beta * visual per class; argmax with ties to the smallest
/// class id. `visual` may be empty when beta is 0.
[[nodiscard]] Prediction fuse_logits(std::span<const double> clip, std::span<const double> visual,
                                     std::span<const int> classes, double beta);

/// ℓ(x,c) = s_clip(x,c) + β r̄(x)·μ_c; argmax with ties to the smallest class id.
[[nodiscard]] Prediction dual_path_predict(const DualTowerModel& model, const PrototypeBank& bank, const Tensor& x,
                                           std::span<const int> classes, double beta);

/// Batched form over the rows of `inputs`; parallel over samples.
[[nodiscard]] std::vector<Prediction> dual_path_predict_batch(const DualTowerModel& model, const PrototypeBank& bank,
                                                              const Tensor& inputs, std::span<const int> classes,
                                                              double beta);

/// CLIP-only argmax (ties to the smallest id); needs no prototypes.
[[nodiscard]] std::vector<int> clip_predict_batch(const DualTowerModel& model, const Tensor& inputs,
                                                  std::span<const int> classes);

struct PredictionRecord {
    std::size_t sample_id = 0;
    int true_class = 0;
    int predicted_class = 0;
    std::vector<double> fused_logits;
};

} // namespace segp
