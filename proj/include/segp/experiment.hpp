// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/anchor.hpp"
#include "segp/metrics.hpp"
#include "segp/model.hpp"
#include "segp/protopath.hpp"
#include "segp/stream.hpp"
#include "segp/train.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace segp {

/// Independent switches for the four method components. With all off the
/// runner is plain adapter fine-tuning with CLIP-only prediction.
struct MethodFlags {
    bool acgd = true;
    bool tsgr = true;
    bool prototype_transfer = true;
    bool visual_branch = true;

    [[nodiscard]] static MethodFlags none() { return {false, false, false, false}; }
    /// "CE", "CE+ACGD", ..., built from the enabled components.
    [[nodiscard]] std::string label() const;
    friend bool operator==(const MethodFlags&, const MethodFlags&) = default;
};

struct ExperimentConfig {
    StreamSpec stream;
    ModelConfig model;
    PretrainConfig pretrain;
    TrainConfig train;
    DpgdConfig dpgd;
    MethodFlags flags;
    double beta = 0.5;           // visual-branch weight at inference
    std::size_t drift_stage = 1; // stage whose update the drift probe measures; >= num_tasks disables it
    std::uint64_t seed = 0;      // master seed; every random stream is derived from it

    /// Throws ConfigError on the first invalid field.
    void validate() const;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Generator spec for a master seed (stream.seed is derived, never set directly).
[[nodiscard]] StreamSpec stream_spec_for(const ExperimentConfig& config);

/// Random base model, tokens of the pretrain classes registered, contrastively pretrained.
[[nodiscard]] DualTowerModel pretrained_base(const ExperimentConfig& config, StreamSource& source);

struct StageRecord {
    std::size_t stage = 0;
    std::vector<int> classes;
    std::vector<StepRecord> losses;
    std::size_t anchors = 0;
    double seed_target_prob = 0.0;   // mean teacher π(c | seed)
    double anchor_target_prob = 0.0; // mean teacher π(c | x_adv)
    double max_delta = 0.0;          // largest |δ| component over all anchors
    std::size_t subgraphs = 0;
    std::vector<int> weight_fallbacks;
    std::vector<int> degenerate_transfers;
    double union_accuracy = 0.0;
};

struct RunMetrics {
    double avg = 0.0;
    double last = 0.0;
    std::optional<double> fwt;
    std::optional<double> bwt;
    std::optional<double> forgetting;
};

struct RunRecord {
    std::string label;
    MethodFlags flags;
    std::uint64_t seed = 0;
    std::string config_hash;
    AccuracyMatrix matrix;
    RunMetrics metrics;
    std::vector<StageRecord> stages;
    std::optional<DriftProbe> drift;
    std::size_t drift_stage = 0;
    std::vector<PredictionRecord> predictions; // final stage, union test set
    PrototypeBank bank;
    double wall_seconds = 0.0;
    bool completed = false;
    std::string error; // set when a stage failed; stages holds what finished
};

/// The per-task loop: teacher snapshot, anchors, text subgraphs, training,
/// prototype estimation and transfer, evaluation. Training data is reached
/// only through source.train_split(t) at stage t. Stage failures are caught
/// and reported in the record (completed = false).
[[nodiscard]] RunRecord run_experiment(StreamSource& source, const DualTowerModel& base,
                                       const ExperimentConfig& config);

/// Convenience: generate the stream, pretrain, run.
[[nodiscard]] RunRecord run_experiment(const ExperimentConfig& config);

struct GridRow {
    std::string label;
    MethodFlags flags;
};

/// The five cumulative ablation rows: CE, +ACGD, +TSGR, +prototype transfer, +visual branch.
[[nodiscard]] std::vector<GridRow> ablation_rows();

/// Every (row, seed) run, row-major. The base model is pretrained once per
/// seed and shared by all rows; runs execute in parallel but results do not
/// depend on scheduling.
[[nodiscard]] std::vector<RunRecord> run_grid(const ExperimentConfig& config, std::span<const GridRow> rows,
                                              std::span<const std::uint64_t> seeds);

/// Same as run_grid over K_adv values with the configured flags.
[[nodiscard]] std::vector<RunRecord> run_kadv_sweep(const ExperimentConfig& config,
                                                    std::span<const std::size_t> k_values,
                                                    std::span<const std::uint64_t> seeds);

/// Standard synthetic preset used by the benchmark and acceptance runs.
[[nodiscard]] ExperimentConfig bench_preset();

} // namespace segp
