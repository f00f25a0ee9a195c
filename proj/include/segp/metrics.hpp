// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/dataset.hpp"
#include "segp/model.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace segp {

/// R[i][j]: accuracy on task j's test set after training task i (0-based).
/// Entries with j <= i come from the regular evaluation; R[j-1][j] is the
/// forward-transfer pre-evaluation. Alongside, the accuracy over the union of
/// all test sets seen so far is kept per stage.
class AccuracyMatrix {
public:
    explicit AccuracyMatrix(std::size_t tasks = 0);

    [[nodiscard]] std::size_t tasks() const noexcept { return tasks_; }
    void set(std::size_t stage, std::size_t task, double accuracy);
    [[nodiscard]] std::optional<double> get(std::size_t stage, std::size_t task) const;
    /// Throws std::out_of_range when the entry was never recorded.
    [[nodiscard]] double at(std::size_t stage, std::size_t task) const;

    void set_union(std::size_t stage, double accuracy);
    [[nodiscard]] std::optional<double> union_accuracy(std::size_t stage) const;
    /// Number of leading stages with a union accuracy.
    [[nodiscard]] std::size_t completed() const;

private:
    std::size_t tasks_;
    std::vector<std::optional<double>> entries_;
    std::vector<std::optional<double>> union_;
};

struct AvgLast {
    double avg = 0.0;
    double last = 0.0;
};

// `t` counts completed stages (1-based), as in the usual definitions.

[[nodiscard]] AvgLast avg_last(const AccuracyMatrix& r, std::size_t t);
/// mean_{j<t} R[t][j] - R[j][j].
[[nodiscard]] double bwt(const AccuracyMatrix& r, std::size_t t);
/// mean_{j=2..t} R[j-1][j].
[[nodiscard]] double fwt(const AccuracyMatrix& r, std::size_t t);
/// mean_{j<t} max_{j<=i<=t} R[i][j] - R[t][j].
[[nodiscard]] double forgetting(const AccuracyMatrix& r, std::size_t t);

/// Jensen-Shannon divergence in nats. Throws unless both are distributions
/// (non-negative, sum 1 within 1e-9) of equal length.
[[nodiscard]] double jsd(std::span<const double> p, std::span<const double> q);

enum class Partition { boundary, core };
[[nodiscard]] const char* partition_name(Partition p) noexcept;

struct DriftRecord {
    std::size_t sample_id = 0;
    double own_class_cosine = 0.0; // teacher v̄(x)·u_y
    double jsd = 0.0;
    Partition partition = Partition::core;
    std::vector<double> before;
    std::vector<double> after;
};

struct DriftSummary {
    double boundary_jsd = 0.0;
    double core_jsd = 0.0;
    std::size_t boundary_count = 0;
    std::size_t core_count = 0;
};

struct DriftProbe {
    std::vector<DriftRecord> records; // in sample order
    DriftSummary summary;
};

/// JSD between teacher and updated-model CLIP distributions over a fixed class
/// set, per sample. The lower half of samples by own-class teacher cosine
/// (floor(n/2) of them, ties to the lower index) is the boundary partition.
[[nodiscard]] DriftProbe drift_probe(const DualTowerModel& teacher, const DualTowerModel& model,
                                     const Dataset& samples, std::span<const int> classes, double tau);

} // namespace segp
