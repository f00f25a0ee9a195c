// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/experiment.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace segp {

/// Per-run metrics document. Contains no timing, so identical runs give
/// byte-identical output.
[[nodiscard]] nlohmann::ordered_json run_metrics_json(const RunRecord& record);

/// Metrics of several runs plus seed means per label, in first-seen label order.
[[nodiscard]] nlohmann::ordered_json grid_metrics_json(std::span<const RunRecord> records);

/// Header stage,task_0..task_{T-1}; entries never evaluated are left empty.
void write_accuracy_csv(std::ostream& out, const AccuracyMatrix& matrix);
/// Reads the format written by write_accuracy_csv.
[[nodiscard]] AccuracyMatrix read_accuracy_csv(std::istream& in);

/// Header stage,union_accuracy.
void write_stage_csv(std::ostream& out, const AccuracyMatrix& matrix);
void read_stage_csv(std::istream& in, AccuracyMatrix& matrix);

/// Header sample_id,own_class_cosine,jsd,partition.
void write_drift_csv(std::ostream& out, const DriftProbe& probe);

/// Header sample_id,true_class,predicted_class,fused_logits (space separated in class order).
void write_predictions_csv(std::ostream& out, std::span<const PredictionRecord> predictions);

/// Loss history across all stages; step and epoch count from the start of the run.
void write_run_losses(std::ostream& out, const RunRecord& record);

/// Plain-text table with one row per label (seed means) and flag columns.
void write_summary(std::ostream& out, std::span<const RunRecord> records);

/// Writes every artifact for `records` under `dir`. A single record is written
/// flat; several get grid-level files plus one subdirectory per run. Returns
/// the paths written. Throws on an empty list or I/O failure.
std::vector<std::filesystem::path> emit_report(std::span<const RunRecord> records, const std::filesystem::path& dir,
                                               const ExperimentConfig& config);

} // namespace segp
