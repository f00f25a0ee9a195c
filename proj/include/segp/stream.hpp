// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/dataset.hpp"
#include "segp/tensor.hpp"

#include <cstdint>
#include <vector>

namespace segp {

/// Synthetic class-incremental stream.
///
/// Each class is a Gaussian cluster with center 0.5 * (1 + direction), where
/// direction is a unit vector in input space, so centers sit inside [0,1].
/// A class introduced after the first task mixes its direction with a random
/// earlier class: normalize((1 - overlap) * fresh + overlap * earlier). This
/// produces the shared visual patterns that form the old/new interface.
///
/// Class tokens (the text-side "names") are normalize(naming * direction +
/// token_noise * noise) for a fixed random naming matrix, so texts carry
/// partial information about appearance and the base model has some
/// zero-shot ability on unseen classes.
struct StreamSpec {
    std::size_t num_tasks = 5;
    std::size_t classes_per_task = 4;
    std::size_t train_per_class = 100;
    std::size_t test_per_class = 50;
    std::size_t input_dim = 32;
    double spread = 0.15;
    double overlap = 0.5;
    std::size_t token_dim = 32;
    double token_noise = 0.5;
    /// Held-out classes for base-model pretraining; disjoint from the stream.
    std::size_t pretrain_classes = 16;
    std::size_t pretrain_per_class = 64;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ClassInfo {
    int id = 0;
    Tensor direction;
    Tensor token;
    /// Earlier class whose direction was mixed in, or -1.
    int mixed_from = -1;
};

struct TaskSplit {
    std::vector<int> classes;
    Dataset train;
    Dataset test;
};

struct Stream {
    std::vector<TaskSplit> tasks;
    std::vector<ClassInfo> classes;          // stream classes, id == index
    std::vector<ClassInfo> pretrain_classes; // ids start at kPretrainClassBase
    Dataset pretrain;
};

inline constexpr int kPretrainClassBase = 100000;

[[nodiscard]] Stream generate_stream(const StreamSpec& spec);

/// Stage-gated access to a stream. The runner only ever reaches task data
/// through this interface, which lets tests verify that stage t never asks
/// for an earlier task's training split.
class StreamSource {
public:
    virtual ~StreamSource() = default;

    [[nodiscard]] virtual std::size_t num_tasks() const = 0;
    [[nodiscard]] virtual const std::vector<int>& task_classes(std::size_t task) const = 0;
    [[nodiscard]] virtual const Tensor& class_token(int class_id) const = 0;
    [[nodiscard]] virtual const Dataset& train_split(std::size_t task) = 0;
    [[nodiscard]] virtual const Dataset& test_split(std::size_t task) = 0;
    [[nodiscard]] virtual const Dataset& pretrain_split() = 0;
    [[nodiscard]] virtual std::vector<int> pretrain_class_ids() const = 0;
};

class InMemoryStream : public StreamSource {
public:
    explicit InMemoryStream(Stream stream) : stream_(std::move(stream)) {}

    [[nodiscard]] std::size_t num_tasks() const override { return stream_.tasks.size(); }
    [[nodiscard]] const std::vector<int>& task_classes(std::size_t task) const override
    {
        return stream_.tasks.at(task).classes;
    }
    [[nodiscard]] const Tensor& class_token(int class_id) const override;
    [[nodiscard]] const Dataset& train_split(std::size_t task) override { return stream_.tasks.at(task).train; }
    [[nodiscard]] const Dataset& test_split(std::size_t task) override { return stream_.tasks.at(task).test; }
    [[nodiscard]] const Dataset& pretrain_split() override { return stream_.pretrain; }
    [[nodiscard]] std::vector<int> pretrain_class_ids() const override;

    [[nodiscard]] const Stream& stream() const noexcept { return stream_; }

private:
    Stream stream_;
};

} // namespace segp
