// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/dataset.hpp"
#include "segp/graph.hpp"
#include "segp/tensor.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace segp {

struct ModelConfig {
    std::size_t input_dim = 32;
    std::size_t raw_dim = 64;
    std::size_t joint_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t lora_rank = 4;
    std::size_t class_token_dim = 32;
    double temperature = 0.07;

    /// Throws std::invalid_argument naming the first violated constraint.
    void validate() const;
};

/// Low-rank update on one layer: W + down * up. `down` is frozen once
/// drawn; `up` starts at zero so an inserted adapter is an exact no-op.
struct LoraAdapter {
    std::string layer;
    Tensor down; // in x rank
    Tensor up;   // rank x out
};

/// Bias-free two-layer perceptron in -> hidden -> out, adapter on the second layer.
struct Tower {
    Tensor hidden; // in x hidden
    Tensor output; // hidden x out
    LoraAdapter adapter;
};

enum class SnapshotLabel { teacher_prev_task, text_reference_g0 };

class Snapshot;

/// Visual raw extractor + projection head, and a text tower over class tokens.
///
/// Inputs to the encode functions may be a single rank-1 sample or a matrix
/// with one sample per row; outputs follow the same convention.
class DualTowerModel {
public:
    /// Random base weights, random frozen adapter down-projections, zero up-projections.
    static DualTowerModel initialize(const ModelConfig& config, std::uint64_t seed);

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }

    /// Registers a class token (stored unit-normalized). Re-registering is an error.
    void register_class(int class_id, const Tensor& token);
    [[nodiscard]] bool has_class(int class_id) const { return tokens_.contains(class_id); }
    [[nodiscard]] const Tensor& token(int class_id) const;
    [[nodiscard]] Tensor token_matrix(std::span<const int> class_ids) const;

    /// r(x) before normalization.
    [[nodiscard]] Tensor raw_features(const Tensor& x) const;
    [[nodiscard]] Tensor encode_raw(const Tensor& x) const;
    [[nodiscard]] Tensor encode_visual(const Tensor& x) const;
    [[nodiscard]] Tensor encode_text(int class_id) const;
    /// One unit row per class id.
    [[nodiscard]] Tensor encode_texts(std::span<const int> class_ids) const;

    /// Cosine logits v̄(x)·u_c; one row per sample.
    [[nodiscard]] Tensor clip_logits(const Tensor& x, std::span<const int> class_ids) const;
    /// Softmax of clip_logits / tau over the class set.
    [[nodiscard]] Tensor clip_probs(const Tensor& x, std::span<const int> class_ids, double tau) const;

    [[nodiscard]] Snapshot take_snapshot(SnapshotLabel label = SnapshotLabel::teacher_prev_task) const;
    /// Copy whose text adapter is zeroed; visual tower untouched.
    [[nodiscard]] Snapshot text_reference() const;

    /// Zero both adapter up-projections.
    void reset_adapters();

    Tower& visual() noexcept { return visual_; }
    [[nodiscard]] const Tower& visual() const noexcept { return visual_; }
    Tensor& projection() noexcept { return projection_; }
    [[nodiscard]] const Tensor& projection() const noexcept { return projection_; }
    Tower& text() noexcept { return text_; }
    [[nodiscard]] const Tower& text() const noexcept { return text_; }
    [[nodiscard]] const std::map<int, Tensor>& tokens() const noexcept { return tokens_; }

    DualTowerModel(ModelConfig config, Tower visual, Tensor projection, Tower text, std::map<int, Tensor> tokens);

private:
    ModelConfig config_;
    Tower visual_;
    Tensor projection_;
    Tower text_;
    std::map<int, Tensor> tokens_;
};

/// Frozen copy of a model; copies share the same immutable weights.
class Snapshot {
public:
    Snapshot(SnapshotLabel label, DualTowerModel model)
        : label_(label), model_(std::make_shared<const DualTowerModel>(std::move(model)))
    {
    }

    [[nodiscard]] SnapshotLabel label() const noexcept { return label_; }
    [[nodiscard]] const DualTowerModel& model() const noexcept { return *model_; }
    const DualTowerModel* operator->() const noexcept { return model_.get(); }

private:
    SnapshotLabel label_;
    std::shared_ptr<const DualTowerModel> model_;
};

// ---------------------------------------------------------------------------
// Graph construction for training and attacks.

/// Which weights enter a graph as parameters.
enum class Trainable { none, adapters, base };

/// Leaf nodes for one model's weights inside a graph.
struct ModelNodes {
    std::string prefix;
    grad::NodeRef visual_hidden, visual_output, visual_down, visual_up;
    grad::NodeRef projection;
    grad::NodeRef text_hidden, text_output, text_down, text_up;
};

/// Adds leaves named "<prefix>.<weight>" to the graph.
ModelNodes add_model_leaves(grad::Graph& graph, const std::string& prefix, Trainable trainable);
/// Binds a model's weights to the leaves created with the same prefix.
void bind_model(grad::Bindings& bindings, const std::string& prefix, const DualTowerModel& model);
/// Writes trained weights back from gradient-updated bindings (inverse of bind_model).
void unbind_model(const grad::Bindings& bindings, const std::string& prefix, DualTowerModel& model);

[[nodiscard]] grad::NodeRef raw_node(grad::Graph& graph, const ModelNodes& m, grad::NodeRef x);
/// Unit-normalized raw features.
[[nodiscard]] grad::NodeRef raw_unit_node(grad::Graph& graph, const ModelNodes& m, grad::NodeRef x);
[[nodiscard]] grad::NodeRef visual_unit_node(grad::Graph& graph, const ModelNodes& m, grad::NodeRef x);
/// Unit-normalized text embeddings for a token matrix.
[[nodiscard]] grad::NodeRef text_unit_node(grad::Graph& graph, const ModelNodes& m, grad::NodeRef tokens);

// ---------------------------------------------------------------------------
// Pretraining of the base towers.

struct PretrainConfig {
    std::size_t steps = 200;
    double learning_rate = 0.01;
    std::size_t batch_size = 64;
};

/// Symmetric contrastive SGD on base weights (adapters untouched) over a
/// labelled split whose classes are registered on the model. Returns the
/// per-step loss.
std::vector<double> pretrain(DualTowerModel& model, const Dataset& split, const PretrainConfig& config,
                             std::uint64_t seed);

} // namespace segp
