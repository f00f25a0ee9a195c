// SPDX-License-Identifier: Apache-2.0

#include "segp/anchor.hpp"

#include "segp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace segp {

using grad::Graph;
using grad::NodeRef;
using kernels::Trans;

namespace {

std::size_t position_of(std::span<const int> classes, int c)
{
    auto it = std::find(classes.begin(), classes.end(), c);
    if (it == classes.end()) {
        throw std::invalid_argument("class " + std::to_string(c) + " is not among the old classes");
    }
    return static_cast<std::size_t>(it - classes.begin());
}

} // namespace

void DpgdConfig::validate() const
{
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("dpgd.epsilon must be > 0");
    }
    if (!(step_size > 0.0)) {
        throw std::invalid_argument("dpgd.step_size must be > 0");
    }
    if (!(visual_weight >= 0.0)) {
        throw std::invalid_argument("dpgd.visual_weight must be >= 0");
    }
    if (seeds_per_class < 1) {
        throw std::invalid_argument("dpgd.seeds_per_class must be >= 1");
    }
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("dpgd.temperature must be > 0");
    }
}

std::vector<const Anchor*> AnchorSet::for_class(int class_id) const
{
    std::vector<const Anchor*> out;
    for (const auto& a : anchors) {
        if (a.target_class == class_id) {
            out.push_back(&a);
        }
    }
    return out;
}

std::vector<int> AnchorSet::target_classes() const
{
    std::vector<int> ids;
    for (const auto& a : anchors) {
        if (ids.empty() || ids.back() != a.target_class) {
            ids.push_back(a.target_class);
        }
    }
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

Tensor AnchorSet::inputs() const
{
    std::vector<Tensor> rows;
    rows.reserve(anchors.size());
    for (const auto& a : anchors) {
        rows.push_back(a.x_adv);
    }
    return Tensor::stack_rows(rows);
}

double seed_score(const Snapshot& teacher, const Tensor& x, int class_id)
{
    const Tensor v = teacher->encode_visual(x);
    const Tensor u = teacher->encode_text(class_id);
    return dot(v.data(), u.data());
}

std::map<int, std::vector<Seed>> select_seeds(const Snapshot& teacher, const Dataset& data,
                                              std::span<const int> old_classes, std::size_t k)
{
    std::map<int, std::vector<Seed>> seeds;
    if (old_classes.empty()) {
        return seeds;
    }
    if (k == 0 || data.size() < k) {
        throw std::invalid_argument("select_seeds: need at least k samples");
    }
    const Tensor scores = teacher->clip_logits(data.inputs, old_classes); // N x |old|
    for (std::size_t col = 0; col < old_classes.size(); ++col) {
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores.at(a, col) > scores.at(b, col); });
        auto& list = seeds[old_classes[col]];
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t idx = order[i];
            list.push_back(Seed{idx, data.sample(idx), data.labels[idx], old_classes[col], scores.at(idx, col)});
        }
    }
    return seeds;
}

double target_probability(const Snapshot& teacher, const Tensor& x, int class_id, std::span<const int> old_classes,
                          double tau)
{
    const Tensor p = teacher->clip_probs(x, old_classes, tau);
    return p[position_of(old_classes, class_id)];
}

double adv_loss(const Snapshot& teacher, const Tensor& x, int class_id, std::span<const int> old_classes, double tau)
{
    const std::size_t pos = position_of(old_classes, class_id);
    Tensor logits = teacher->clip_logits(x, old_classes);
    for (double& v : logits.data()) {
        v /= tau;
    }
    kernels::log_softmax_rows(logits);
    return -logits[pos];
}

double visual_anchor_loss(const Snapshot& teacher, const Tensor& x, int class_id, const PrototypeBank& prototypes)
{
    const Tensor& mu = prototypes.at(class_id);
    const Tensor r = teacher->encode_raw(x);
    return 1.0 - dot(r.data(), mu.data());
}

double dual_objective(const Snapshot& teacher, const Tensor& x, int class_id, std::span<const int> old_classes,
                      const PrototypeBank& prototypes, const DpgdConfig& config)
{
    const double text = adv_loss(teacher, x, class_id, old_classes, config.temperature);
    if (config.visual_weight == 0.0) {
        return text;
    }
    return text + config.visual_weight * visual_anchor_loss(teacher, x, class_id, prototypes);
}

Tensor project_linf(Tensor delta, double epsilon)
{
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("project_linf: epsilon must be > 0");
    }
    for (double& v : delta.data()) {
        v = std::clamp(v, -epsilon, epsilon);
    }
    return delta;
}

// ---------------------------------------------------------------------------

DualObjective::DualObjective(const Snapshot& teacher, std::span<const int> old_classes,
                             const PrototypeBank& prototypes, const DpgdConfig& config)
    : teacher_(&teacher), old_classes_(old_classes.begin(), old_classes.end()), prototypes_(&prototypes),
      config_(config)
{
    config_.validate();
    if (old_classes_.empty()) {
        throw std::invalid_argument("DualObjective: no old classes");
    }
    const ModelNodes m = add_model_leaves(graph_, "teacher", Trainable::none);
    const NodeRef seeds = graph_.constant("seeds");
    const NodeRef delta = graph_.parameter("delta");
    const NodeRef texts = graph_.constant("texts");
    const NodeRef targets = graph_.constant("targets");
    const NodeRef protos = graph_.constant("prototypes");
    const NodeRef offset = graph_.constant("offset");

    const NodeRef x = graph_.add(seeds, delta);
    const NodeRef raw = raw_node(graph_, m, x);
    const NodeRef v = graph_.l2_normalize(graph_.matmul(raw, m.projection));
    const NodeRef logits = graph_.scale(graph_.matmul(v, texts, Trans::yes), 1.0 / config_.temperature);
    const NodeRef text_term = graph_.scale(graph_.dot(targets, graph_.log_softmax(logits)), -1.0);
    if (config_.visual_weight > 0.0) {
        const NodeRef r = graph_.l2_normalize(raw);
        const NodeRef visual = graph_.scale(graph_.dot(protos, r), -config_.visual_weight);
        loss_ = graph_.add(graph_.add(text_term, visual), offset);
    } else {
        loss_ = text_term;
    }

    bind_model(base_, "teacher", teacher.model());
    base_["texts"] = teacher->encode_texts(old_classes_);
}

DualObjective::Result DualObjective::evaluate(const Tensor& seeds, const Tensor& delta,
                                              std::span<const int> targets) const
{
    if (!seeds.same_shape(delta) || seeds.rows() != targets.size()) {
        throw std::invalid_argument("DualObjective: seeds, delta and targets disagree in shape");
    }
    const std::size_t n = targets.size();
    const std::size_t raw_dim = (*teacher_)->config().raw_dim;
    Tensor onehot = Tensor::zeros(n, old_classes_.size());
    Tensor protos = Tensor::zeros(n, raw_dim);
    for (std::size_t i = 0; i < n; ++i) {
        onehot.at(i, position_of(old_classes_, targets[i])) = 1.0;
        if (config_.visual_weight > 0.0) {
            const Tensor& mu = prototypes_->at(targets[i]);
            std::copy(mu.data().begin(), mu.data().end(), protos.row(i).begin());
        }
    }
    // Rank-1 inputs are evaluated as a single row.
    const bool single = seeds.rank() == 1;
    auto as_rows = [&](const Tensor& t) { return single ? Tensor::matrix(1, t.size(), t.values()) : t; };

    grad::Bindings b = base_;
    b["seeds"] = as_rows(seeds);
    b["delta"] = as_rows(delta);
    b["targets"] = std::move(onehot);
    b["prototypes"] = std::move(protos);
    b["offset"] = Tensor::scalar(config_.visual_weight * static_cast<double>(n));

    const grad::Evaluation ev(graph_, b);
    Result out{ev.value(loss_).item(), ev.gradient(loss_).at("delta")};
    if (single) {
        out.gradient = Tensor::vector(std::vector<double>(out.gradient.values()));
    }
    return out;
}

Tensor sign_step(const Tensor& delta, const Tensor& gradient, double step, double epsilon)
{
    if (!delta.same_shape(gradient)) {
        throw std::invalid_argument("sign_step: delta and gradient shapes differ");
    }
    Tensor next = delta;
    auto d = next.data();
    auto g = gradient.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
        d[i] -= step * s;
    }
    return project_linf(std::move(next), epsilon);
}

Tensor pgd_step(const Snapshot& teacher, const Seed& seed, const Tensor& delta, std::span<const int> old_classes,
                const PrototypeBank& prototypes, const DpgdConfig& config)
{
    const DualObjective objective(teacher, old_classes, prototypes, config);
    const int target[] = {seed.target_class};
    const auto result = objective.evaluate(seed.x, delta, target);
    return sign_step(delta, result.gradient, config.step_size, config.epsilon);
}

AnchorSet build_anchor_set(const Snapshot& teacher, const Dataset& data, std::span<const int> old_classes,
                           const PrototypeBank& prototypes, const DpgdConfig& config)
{
    config.validate();
    AnchorSet set;
    if (old_classes.empty()) {
        return set;
    }
    const auto seeds = select_seeds(teacher, data, old_classes, config.seeds_per_class);
    const DualObjective objective(teacher, old_classes, prototypes, config);

    std::vector<int> classes;
    for (const auto& [c, _] : seeds) {
        classes.push_back(c);
    }
    std::vector<std::vector<Anchor>> per_class(classes.size());
    const auto count = static_cast<std::ptrdiff_t>(classes.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t ci = 0; ci < count; ++ci) {
        const int c = classes[static_cast<std::size_t>(ci)];
        const auto& list = seeds.at(c);
        std::vector<Tensor> rows;
        for (const auto& s : list) {
            rows.push_back(s.x);
        }
        const Tensor x = Tensor::stack_rows(rows);
        const std::vector<int> targets(list.size(), c);
        Tensor delta(x.shape());
        for (std::size_t k = 0; k < config.iterations; ++k) {
            const auto result = objective.evaluate(x, delta, targets);
            delta = sign_step(delta, result.gradient, config.step_size, config.epsilon);
        }
        auto& out = per_class[static_cast<std::size_t>(ci)];
        for (std::size_t i = 0; i < list.size(); ++i) {
            Anchor a;
            a.delta = delta.row_tensor(i);
            a.x_adv = list[i].x;
            for (std::size_t j = 0; j < a.x_adv.size(); ++j) {
                a.x_adv[j] += a.delta[j];
            }
            a.target_class = c;
            a.origin = list[i];
            out.push_back(std::move(a));
        }
    }
    for (auto& group : per_class) {
        for (auto& a : group) {
            set.anchors.push_back(std::move(a));
        }
    }
    return set;
}

} // namespace segp
