// SPDX-License-Identifier: Apache-2.0

#include "segp/model.hpp"

#include "segp/kernels.hpp"
#include "segp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace segp {

using grad::Graph;
using grad::NodeRef;
using kernels::Trans;

namespace {

Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng)
{
    Tensor t({rows, cols});
    for (double& v : t.data()) {
        v = rng.normal(0.0, stddev);
    }
    return t;
}

Tower make_tower(std::size_t in, std::size_t hidden, std::size_t out, std::size_t rank, const std::string& name,
                 Rng& rng)
{
    Tower t;
    t.hidden = gaussian(in, hidden, std::sqrt(2.0 / static_cast<double>(in)), rng);
    t.output = gaussian(hidden, out, std::sqrt(1.0 / static_cast<double>(hidden)), rng);
    t.adapter.layer = name + ".output";
    t.adapter.down = gaussian(hidden, rank, std::sqrt(1.0 / static_cast<double>(hidden)), rng);
    t.adapter.up = Tensor::zeros(rank, out);
    return t;
}

// Second-layer output with the adapter folded in as h*W + (h*A)*B.
Tensor tower_forward(const Tower& t, const Tensor& x)
{
    Tensor h = kernels::matmul(x, t.hidden);
    for (double& v : h.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    Tensor out = kernels::matmul(h, t.output);
    const Tensor low = kernels::matmul(h, t.adapter.down);
    const Tensor delta = kernels::matmul(low, t.adapter.up);
    auto o = out.data();
    auto d = delta.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] += d[i];
    }
    return out;
}

void require_width(const Tensor& x, std::size_t width, const char* what)
{
    if (x.rank() == 0 || x.cols() != width) {
        throw std::invalid_argument(std::string(what) + ": expected width " + std::to_string(width) + ", got shape "
                                    + shape_string(x.shape()));
    }
}

NodeRef tower_node(Graph& g, NodeRef x, NodeRef hidden, NodeRef output, NodeRef down, NodeRef up)
{
    NodeRef h = g.relu(g.matmul(x, hidden));
    return g.add(g.matmul(h, output), g.matmul(g.matmul(h, down), up));
}

} // namespace

void ModelConfig::validate() const
{
    auto positive = [](std::size_t v, const char* name) {
        if (v < 1) {
            throw std::invalid_argument(std::string("model.") + name + " must be >= 1");
        }
    };
    positive(input_dim, "input_dim");
    positive(raw_dim, "raw_dim");
    positive(joint_dim, "joint_dim");
    positive(hidden_dim, "hidden_dim");
    positive(lora_rank, "lora_rank");
    positive(class_token_dim, "class_token_dim");
    if (lora_rank > std::min({hidden_dim, raw_dim, joint_dim})) {
        throw std::invalid_argument("model.lora_rank exceeds the adapted layer dimensions");
    }
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("model.temperature must be > 0");
    }
}

DualTowerModel::DualTowerModel(ModelConfig config, Tower visual, Tensor projection, Tower text,
                               std::map<int, Tensor> tokens)
    : config_(config), visual_(std::move(visual)), projection_(std::move(projection)), text_(std::move(text)),
      tokens_(std::move(tokens))
{
    config_.validate();
}

DualTowerModel DualTowerModel::initialize(const ModelConfig& config, std::uint64_t seed)
{
    config.validate();
    Rng rng(seed);
    Tower visual = make_tower(config.input_dim, config.hidden_dim, config.raw_dim, config.lora_rank, "visual", rng);
    Tensor projection = gaussian(config.raw_dim, config.joint_dim, std::sqrt(1.0 / static_cast<double>(config.raw_dim)), rng);
    Tower text = make_tower(config.class_token_dim, config.hidden_dim, config.joint_dim, config.lora_rank, "text", rng);
    return DualTowerModel(config, std::move(visual), std::move(projection), std::move(text), {});
}

void DualTowerModel::register_class(int class_id, const Tensor& token)
{
    if (tokens_.contains(class_id)) {
        throw std::invalid_argument("class " + std::to_string(class_id) + " already registered");
    }
    if (token.size() != config_.class_token_dim) {
        throw std::invalid_argument("class token has " + std::to_string(token.size()) + " values, expected "
                                    + std::to_string(config_.class_token_dim));
    }
    Tensor unit = Tensor::vector(std::vector<double>(token.values()));
    kernels::normalize_rows(unit);
    tokens_.emplace(class_id, std::move(unit));
}

const Tensor& DualTowerModel::token(int class_id) const
{
    auto it = tokens_.find(class_id);
    if (it == tokens_.end()) {
        throw std::out_of_range("unknown class " + std::to_string(class_id));
    }
    return it->second;
}

Tensor DualTowerModel::token_matrix(std::span<const int> class_ids) const
{
    std::vector<Tensor> rows;
    rows.reserve(class_ids.size());
    for (int c : class_ids) {
        rows.push_back(token(c));
    }
    if (rows.empty()) {
        return Tensor({0, config_.class_token_dim});
    }
    return Tensor::stack_rows(rows);
}

Tensor DualTowerModel::raw_features(const Tensor& x) const
{
    require_width(x, config_.input_dim, "encode_raw");
    return tower_forward(visual_, x);
}

Tensor DualTowerModel::encode_raw(const Tensor& x) const
{
    Tensor r = raw_features(x);
    kernels::normalize_rows(r);
    return r;
}

Tensor DualTowerModel::encode_visual(const Tensor& x) const
{
    Tensor v = kernels::matmul(raw_features(x), projection_);
    kernels::normalize_rows(v);
    return v;
}

Tensor DualTowerModel::encode_text(int class_id) const
{
    Tensor u = tower_forward(text_, token(class_id));
    kernels::normalize_rows(u);
    return u;
}

Tensor DualTowerModel::encode_texts(std::span<const int> class_ids) const
{
    Tensor u = tower_forward(text_, token_matrix(class_ids));
    kernels::normalize_rows(u);
    return u;
}

Tensor DualTowerModel::clip_logits(const Tensor& x, std::span<const int> class_ids) const
{
    if (class_ids.empty()) {
        throw std::invalid_argument("clip_logits: empty class set");
    }
    return kernels::matmul(encode_visual(x), Trans::no, encode_texts(class_ids), Trans::yes);
}

Tensor DualTowerModel::clip_probs(const Tensor& x, std::span<const int> class_ids, double tau) const
{
    if (!(tau > 0.0)) {
        throw std::invalid_argument("clip_probs: temperature must be > 0");
    }
    Tensor p = clip_logits(x, class_ids);
    for (double& v : p.data()) {
        v /= tau;
    }
    kernels::softmax_rows(p);
    return p;
}

Snapshot DualTowerModel::take_snapshot(SnapshotLabel label) const { return Snapshot(label, *this); }

Snapshot DualTowerModel::text_reference() const
{
    DualTowerModel copy = *this;
    std::fill(copy.text_.adapter.up.data().begin(), copy.text_.adapter.up.data().end(), 0.0);
    return Snapshot(SnapshotLabel::text_reference_g0, std::move(copy));
}

void DualTowerModel::reset_adapters()
{
    std::fill(visual_.adapter.up.data().begin(), visual_.adapter.up.data().end(), 0.0);
    std::fill(text_.adapter.up.data().begin(), text_.adapter.up.data().end(), 0.0);
}

// ---------------------------------------------------------------------------

ModelNodes add_model_leaves(Graph& graph, const std::string& prefix, Trainable trainable)
{
    auto leaf = [&](const char* name, bool param) {
        std::string full = prefix + "." + name;
        return param ? graph.parameter(std::move(full)) : graph.constant(std::move(full));
    };
    const bool base = trainable == Trainable::base;
    const bool adapters = trainable == Trainable::adapters;
    ModelNodes m;
    m.prefix = prefix;
    m.visual_hidden = leaf("visual.hidden", base);
    m.visual_output = leaf("visual.output", base);
    m.visual_down = leaf("visual.down", false);
    m.visual_up = leaf("visual.up", adapters);
    m.projection = leaf("projection", base);
    m.text_hidden = leaf("text.hidden", base);
    m.text_output = leaf("text.output", base);
    m.text_down = leaf("text.down", false);
    m.text_up = leaf("text.up", adapters);
    return m;
}

void bind_model(grad::Bindings& b, const std::string& prefix, const DualTowerModel& model)
{
    b[prefix + ".visual.hidden"] = model.visual().hidden;
    b[prefix + ".visual.output"] = model.visual().output;
    b[prefix + ".visual.down"] = model.visual().adapter.down;
    b[prefix + ".visual.up"] = model.visual().adapter.up;
    b[prefix + ".projection"] = model.projection();
    b[prefix + ".text.hidden"] = model.text().hidden;
    b[prefix + ".text.output"] = model.text().output;
    b[prefix + ".text.down"] = model.text().adapter.down;
    b[prefix + ".text.up"] = model.text().adapter.up;
}

void unbind_model(const grad::Bindings& b, const std::string& prefix, DualTowerModel& model)
{
    model.visual().hidden = b.at(prefix + ".visual.hidden");
    model.visual().output = b.at(prefix + ".visual.output");
    model.visual().adapter.up = b.at(prefix + ".visual.up");
    model.projection() = b.at(prefix + ".projection");
    model.text().hidden = b.at(prefix + ".text.hidden");
    model.text().output = b.at(prefix + ".text.output");
    model.text().adapter.up = b.at(prefix + ".text.up");
}

NodeRef raw_node(Graph& g, const ModelNodes& m, NodeRef x)
{
    return tower_node(g, x, m.visual_hidden, m.visual_output, m.visual_down, m.visual_up);
}

NodeRef raw_unit_node(Graph& g, const ModelNodes& m, NodeRef x) { return g.l2_normalize(raw_node(g, m, x)); }

NodeRef visual_unit_node(Graph& g, const ModelNodes& m, NodeRef x)
{
    return g.l2_normalize(g.matmul(raw_node(g, m, x), m.projection));
}

NodeRef text_unit_node(Graph& g, const ModelNodes& m, NodeRef tokens)
{
    return g.l2_normalize(tower_node(g, tokens, m.text_hidden, m.text_output, m.text_down, m.text_up));
}

// ---------------------------------------------------------------------------

std::vector<double> pretrain(DualTowerModel& model, const Dataset& split, const PretrainConfig& config,
                             std::uint64_t seed)
{
    if (split.empty()) {
        throw std::invalid_argument("pretrain: empty split");
    }
    if (config.batch_size == 0 || !(config.learning_rate >= 0.0)) {
        throw std::invalid_argument("pretrain: invalid configuration");
    }
    std::vector<int> classes(split.labels);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    std::map<int, std::size_t> column;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        column[classes[i]] = i;
    }
    const double inv_tau = 1.0 / model.config().temperature;

    Graph g;
    const ModelNodes m = add_model_leaves(g, "m", Trainable::base);
    const NodeRef x = g.constant("x");
    const NodeRef tokens = g.constant("tokens");
    const NodeRef image_targets = g.constant("image_targets"); // B x C one-hot
    const NodeRef text_targets = g.constant("text_targets");   // C x B, rows uniform over matching images
    const NodeRef v = visual_unit_node(g, m, x);
    const NodeRef u = text_unit_node(g, m, tokens);
    const NodeRef it_logits = g.scale(g.matmul(v, u, Trans::yes), inv_tau);
    const NodeRef ti_logits = g.scale(g.matmul(u, v, Trans::yes), inv_tau);
    const NodeRef it_term = g.dot(image_targets, g.log_softmax(it_logits));
    const NodeRef ti_term = g.dot(text_targets, g.log_softmax(ti_logits));
    const NodeRef batch_inv = g.constant("batch_inv");   // -1 / (2B)
    const NodeRef present_inv = g.constant("present_inv"); // -1 / (2 * classes present)
    const NodeRef loss = g.add(g.dot(batch_inv, it_term), g.dot(present_inv, ti_term));

    grad::Bindings b;
    bind_model(b, "m", model);
    b["tokens"] = model.token_matrix(classes);

    Rng rng(seed);
    std::vector<std::size_t> order(split.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    std::vector<double> history;
    history.reserve(config.steps);
    const std::size_t batch = std::min(config.batch_size, split.size());
    for (std::size_t step = 0; step < config.steps; ++step) {
        std::vector<std::size_t> idx;
        idx.reserve(batch);
        while (idx.size() < batch) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng.engine());
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }
        const Dataset mb = split.subset(idx);
        Tensor it_t = Tensor::zeros(batch, classes.size());
        Tensor ti_t = Tensor::zeros(classes.size(), batch);
        std::vector<std::size_t> counts(classes.size(), 0);
        for (std::size_t i = 0; i < batch; ++i) {
            const std::size_t c = column.at(mb.labels[i]);
            it_t.at(i, c) = 1.0;
            ++counts[c];
        }
        std::size_t present = 0;
        for (std::size_t i = 0; i < batch; ++i) {
            const std::size_t c = column.at(mb.labels[i]);
            ti_t.at(c, i) = 1.0 / static_cast<double>(counts[c]);
        }
        for (std::size_t n : counts) {
            present += n > 0 ? 1 : 0;
        }
        b["x"] = mb.inputs;
        b["image_targets"] = std::move(it_t);
        b["text_targets"] = std::move(ti_t);
        b["batch_inv"] = Tensor::scalar(-0.5 / static_cast<double>(batch));
        b["present_inv"] = Tensor::scalar(-0.5 / static_cast<double>(present));

        const grad::Evaluation ev(g, b);
        history.push_back(ev.value(loss).item());
        const grad::Gradients grads = ev.gradient(loss);
        for (const auto& [name, gr] : grads) {
            auto w = b.at(name).data();
            auto d = gr.data();
            for (std::size_t k = 0; k < w.size(); ++k) {
                w[k] -= config.learning_rate * d[k];
            }
        }
    }
    unbind_model(b, "m", model);
    return history;
}

} // namespace segp
