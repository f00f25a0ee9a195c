// SPDX-License-Identifier: Apache-2.0

#include "segp/train.hpp"

#include "segp/kernels.hpp"
#include "segp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace segp {

using grad::Graph;
using grad::NodeRef;
using kernels::Trans;

namespace {

// Added to similarity logits outside a subgraph's neighbour set.
constexpr double kMaskedLogit = -1e9;

std::size_t column_of(std::span<const int> classes, int c)
{
    auto it = std::find(classes.begin(), classes.end(), c);
    if (it == classes.end()) {
        throw std::invalid_argument("class " + std::to_string(c) + " is outside the class set");
    }
    return static_cast<std::size_t>(it - classes.begin());
}

Tensor selector(std::span<const int> picked, std::span<const int> all)
{
    Tensor s = Tensor::zeros(picked.size(), all.size());
    for (std::size_t i = 0; i < picked.size(); ++i) {
        s.at(i, column_of(all, picked[i])) = 1.0;
    }
    return s;
}

Tensor scaled_softmax(Tensor logits, double tau)
{
    for (double& v : logits.data()) {
        v /= tau;
    }
    kernels::softmax_rows(logits);
    return logits;
}

// ACGD softens the classification logits s/tau, so the effective softmax
// temperature on raw cosines is tau * tau_A.
double acgd_tau(const TrainConfig& c)
{
    return c.temperature * c.acgd_temperature;
}

} // namespace

void TrainConfig::validate() const
{
    if (epochs < 1 || batch_size < 1 || anchor_batch_size < 1 || neighbors < 1) {
        throw std::invalid_argument("train sizes (epochs, batch sizes, neighbors) must be >= 1");
    }
    if (!(learning_rate >= 0.0)) {
        throw std::invalid_argument("train.learning_rate must be >= 0");
    }
    if (!(acgd_weight >= 0.0) || !(gr_weight >= 0.0)) {
        throw std::invalid_argument("train loss weights must be >= 0");
    }
    if (!(acgd_temperature > 0.0) || !(text_temperature > 0.0) || !(temperature > 0.0)) {
        throw std::invalid_argument("train temperatures must be > 0");
    }
}

double kl_divergence(std::span<const double> p, std::span<const double> q)
{
    if (p.size() != q.size()) {
        throw std::invalid_argument("kl_divergence: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            s += p[i] * (std::log(p[i]) - std::log(std::max(q[i], 1e-12)));
        }
    }
    return s;
}

double loss_cls(const DualTowerModel& model, const Dataset& batch, std::span<const int> classes, double tau)
{
    if (batch.empty()) {
        throw std::invalid_argument("loss_cls: empty batch");
    }
    for (int y : batch.labels) {
        column_of(classes, y);
    }
    const Tensor p = model.clip_probs(batch.inputs, classes, tau);
    double s = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        s -= std::log(p.at(i, column_of(classes, batch.labels[i])));
    }
    return s / static_cast<double>(batch.size());
}

double loss_acgd(const DualTowerModel& student, const Snapshot& teacher, const Tensor& anchor_inputs,
                 std::span<const int> old_classes, double tau_a, double logit_scale)
{
    if (old_classes.empty() || anchor_inputs.size() == 0) {
        return 0.0;
    }
    if (!(tau_a > 0.0) || !(logit_scale > 0.0)) {
        throw std::invalid_argument("loss_acgd: tau_a and logit_scale must be > 0");
    }
    const Tensor pt = teacher->clip_probs(anchor_inputs, old_classes, tau_a / logit_scale);
    const Tensor ps = student.clip_probs(anchor_inputs, old_classes, tau_a / logit_scale);
    double s = 0.0;
    for (std::size_t i = 0; i < pt.rows(); ++i) {
        s += kl_divergence(pt.row(i), ps.row(i));
    }
    return tau_a * tau_a * s / static_cast<double>(pt.rows());
}

std::vector<TextSubgraph> build_text_subgraphs(const Snapshot& reference, std::span<const int> new_classes,
                                               std::span<const int> seen_classes, std::size_t k, double tau_t)
{
    std::vector<TextSubgraph> graphs;
    if (seen_classes.size() < 2) {
        return graphs;
    }
    if (k < 1 || !(tau_t > 0.0)) {
        throw std::invalid_argument("build_text_subgraphs: need k >= 1 and tau_t > 0");
    }
    const Tensor u = reference->encode_texts(seen_classes);
    for (int c : new_classes) {
        const std::size_t row = column_of(seen_classes, c);
        std::vector<std::pair<double, int>> candidates;
        for (std::size_t j = 0; j < seen_classes.size(); ++j) {
            if (j != row) {
                candidates.emplace_back(dot(u.row(row), u.row(j)), seen_classes[j]);
            }
        }
        std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        candidates.resize(std::min(k, candidates.size()));
        TextSubgraph sg;
        sg.root = c;
        Tensor logits({candidates.size()});
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            sg.neighbors.push_back(candidates[i].second);
            logits[i] = candidates[i].first;
        }
        const Tensor phi = scaled_softmax(std::move(logits), tau_t);
        sg.reference.assign(phi.values().begin(), phi.values().end());
        graphs.push_back(std::move(sg));
    }
    return graphs;
}

double loss_tsgr(const DualTowerModel& student, std::span<const TextSubgraph> subgraphs, double tau_t)
{
    if (subgraphs.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (const auto& sg : subgraphs) {
        const Tensor root = student.encode_text(sg.root);
        const Tensor nb = student.encode_texts(sg.neighbors);
        Tensor logits({sg.neighbors.size()});
        for (std::size_t j = 0; j < sg.neighbors.size(); ++j) {
            logits[j] = dot(root.data(), nb.row(j));
        }
        const Tensor phi = scaled_softmax(std::move(logits), tau_t);
        s += kl_divergence(sg.reference, phi.data());
    }
    return s / static_cast<double>(subgraphs.size());
}

LossTerms total_loss(const DualTowerModel& student, const Dataset& batch, const Tensor& anchor_inputs,
                     const TaskContext& context, const TrainConfig& config)
{
    LossTerms t;
    t.cls = loss_cls(student, batch, context.task_classes, config.temperature);
    if (context.use_acgd && context.teacher != nullptr) {
        t.acgd = loss_acgd(student, *context.teacher, anchor_inputs, context.old_classes, config.acgd_temperature,
                           1.0 / config.temperature);
    }
    if (context.use_tsgr) {
        t.tsgr = loss_tsgr(student, context.subgraphs, config.text_temperature);
    }
    t.total = t.cls + config.acgd_weight * t.acgd + config.gr_weight * t.tsgr;
    return t;
}

// ---------------------------------------------------------------------------

TaskObjective::TaskObjective(const TaskContext& context, const TrainConfig& config, bool anchors_available)
    : context_(&context), config_(config),
      acgd_active_(context.use_acgd && anchors_available && !context.old_classes.empty()
                   && context.teacher != nullptr),
      tsgr_active_(context.use_tsgr && !context.subgraphs.empty())
{
    config_.validate();
    if (context.task_classes.empty()) {
        throw std::invalid_argument("TaskObjective: no task classes");
    }
    const ModelNodes m = add_model_leaves(graph_, "s", Trainable::adapters);
    const NodeRef tokens = graph_.constant("tokens");
    const NodeRef u_all = text_unit_node(graph_, m, tokens);

    {
        const NodeRef x = graph_.constant("x");
        const NodeRef y = graph_.constant("y");
        const NodeRef u = graph_.matmul(graph_.constant("sel_task"), u_all);
        const NodeRef v = visual_unit_node(graph_, m, x);
        const NodeRef logits = graph_.scale(graph_.matmul(v, u, Trans::yes), 1.0 / config_.temperature);
        cls_ = graph_.dot(graph_.constant("cls_scale"), graph_.dot(y, graph_.log_softmax(logits)));
    }
    total_ = cls_;

    if (acgd_active_) {
        const NodeRef xa = graph_.constant("anchors");
        const NodeRef u = graph_.matmul(graph_.constant("sel_old"), u_all);
        const NodeRef v = visual_unit_node(graph_, m, xa);
        const NodeRef logits = graph_.scale(graph_.matmul(v, u, Trans::yes), 1.0 / acgd_tau(config_));
        // KL as sum p * (log p - log q) rather than entropy minus cross-entropy:
        // the tau_A^2 factor would otherwise amplify the cancellation error.
        const NodeRef log_ratio = graph_.sub(graph_.constant("teacher_log_probs"), graph_.log_softmax(logits));
        const NodeRef kl_sum = graph_.dot(graph_.constant("teacher_probs"), log_ratio);
        acgd_ = graph_.dot(graph_.constant("acgd_scale"), kl_sum);
        total_ = graph_.add(total_, graph_.scale(acgd_, config_.acgd_weight));
    }

    if (tsgr_active_) {
        const auto& seen = context.seen_classes;
        std::vector<int> roots;
        tsgr_mask_ = Tensor(std::vector<std::size_t>{context.subgraphs.size(), seen.size()}, kMaskedLogit);
        tsgr_reference_ = Tensor::zeros(context.subgraphs.size(), seen.size());
        tsgr_log_reference_ = Tensor::zeros(context.subgraphs.size(), seen.size());
        for (std::size_t i = 0; i < context.subgraphs.size(); ++i) {
            const auto& sg = context.subgraphs[i];
            roots.push_back(sg.root);
            for (std::size_t j = 0; j < sg.neighbors.size(); ++j) {
                const std::size_t col = column_of(seen, sg.neighbors[j]);
                tsgr_mask_.at(i, col) = 0.0;
                tsgr_reference_.at(i, col) = sg.reference[j];
                tsgr_log_reference_.at(i, col) = std::log(sg.reference[j]);
            }
        }
        tsgr_roots_ = selector(roots, seen);

        const NodeRef ur = graph_.matmul(graph_.constant("sel_roots"), u_all);
        const NodeRef sims = graph_.scale(graph_.matmul(ur, u_all, Trans::yes), 1.0 / config_.text_temperature);
        const NodeRef masked = graph_.add(sims, graph_.constant("tsgr_mask"));
        const NodeRef log_ratio = graph_.sub(graph_.constant("tsgr_log_reference"), graph_.log_softmax(masked));
        const NodeRef kl_sum = graph_.dot(graph_.constant("tsgr_reference"), log_ratio);
        tsgr_ = graph_.dot(graph_.constant("tsgr_scale"), kl_sum);
        total_ = graph_.add(total_, graph_.scale(tsgr_, config_.gr_weight));
    }
}

grad::Bindings TaskObjective::bindings(const DualTowerModel& student, const Dataset& batch,
                                       const Tensor& anchor_inputs) const
{
    if (batch.empty()) {
        throw std::invalid_argument("TaskObjective: empty batch");
    }
    const TaskContext& ctx = *context_;
    grad::Bindings b;
    bind_model(b, "s", student);
    b["tokens"] = student.token_matrix(ctx.seen_classes);
    b["sel_task"] = selector(ctx.task_classes, ctx.seen_classes);
    b["x"] = batch.inputs;
    Tensor y = Tensor::zeros(batch.size(), ctx.task_classes.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        y.at(i, column_of(ctx.task_classes, batch.labels[i])) = 1.0;
    }
    b["y"] = std::move(y);
    b["cls_scale"] = Tensor::scalar(-1.0 / static_cast<double>(batch.size()));

    if (acgd_active_) {
        if (anchor_inputs.size() == 0) {
            throw std::invalid_argument("TaskObjective: ACGD active but no anchor batch");
        }
        Tensor log_pt = (*ctx.teacher)->clip_logits(anchor_inputs, ctx.old_classes);
        for (double& v : log_pt.data()) {
            v /= acgd_tau(config_);
        }
        kernels::log_softmax_rows(log_pt);
        Tensor pt = log_pt;
        for (double& v : pt.data()) {
            v = std::exp(v);
        }
        b["anchors"] = anchor_inputs;
        b["sel_old"] = selector(ctx.old_classes, ctx.seen_classes);
        b["teacher_log_probs"] = std::move(log_pt);
        b["teacher_probs"] = pt;
        const double tau2 = config_.acgd_temperature * config_.acgd_temperature;
        b["acgd_scale"] = Tensor::scalar(tau2 / static_cast<double>(pt.rows()));
    }
    if (tsgr_active_) {
        b["sel_roots"] = tsgr_roots_;
        b["tsgr_mask"] = tsgr_mask_;
        b["tsgr_reference"] = tsgr_reference_;
        b["tsgr_log_reference"] = tsgr_log_reference_;
        b["tsgr_scale"] = Tensor::scalar(1.0 / static_cast<double>(ctx.subgraphs.size()));
    }
    return b;
}

TaskObjective::Result TaskObjective::evaluate(const DualTowerModel& student, const Dataset& batch,
                                              const Tensor& anchor_inputs) const
{
    const grad::Evaluation ev(graph_, bindings(student, batch, anchor_inputs));
    Result r;
    r.loss.cls = ev.value(cls_).item();
    r.loss.acgd = acgd_active_ ? ev.value(acgd_).item() : 0.0;
    r.loss.tsgr = tsgr_active_ ? ev.value(tsgr_).item() : 0.0;
    r.loss.total = ev.value(total_).item();
    r.gradients = ev.gradient(total_);
    return r;
}

// ---------------------------------------------------------------------------

double scheduled_lr(const TrainConfig& config, std::size_t step, std::size_t total)
{
    if (!config.cosine_decay || total == 0) {
        return config.learning_rate;
    }
    const double progress = static_cast<double>(step) / static_cast<double>(total);
    return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainResult train_task(DualTowerModel& model, const Dataset& data, const AnchorSet& anchors,
                       const TaskContext& context, const TrainConfig& config, std::uint64_t seed)
{
    config.validate();
    if (data.empty()) {
        throw std::invalid_argument("train_task: empty training data");
    }
    const TaskObjective objective(context, config, !anchors.empty());
    const Tensor anchor_inputs = anchors.empty() ? Tensor({0, 0}) : anchors.inputs();

    const std::size_t batches = (data.size() + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = config.epochs * batches;
    Rng batch_rng(seed, "train.batches");
    Rng anchor_rng(seed, "train.anchors");

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> anchor_order(anchors.size());
    std::iota(anchor_order.begin(), anchor_order.end(), 0);

    TrainResult result;
    result.history.reserve(total_steps);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), batch_rng.engine());
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t lo = b * config.batch_size;
            const std::size_t hi = std::min(lo + config.batch_size, data.size());
            const Dataset batch = data.subset(std::span(order).subspan(lo, hi - lo));

            Tensor anchor_batch({0, 0});
            if (!anchors.empty()) {
                std::vector<std::size_t> pick;
                if (anchors.size() >= config.anchor_batch_size) {
                    std::shuffle(anchor_order.begin(), anchor_order.end(), anchor_rng.engine());
                    pick.assign(anchor_order.begin(),
                                anchor_order.begin() + static_cast<std::ptrdiff_t>(config.anchor_batch_size));
                } else {
                    for (std::size_t i = 0; i < config.anchor_batch_size; ++i) {
                        pick.push_back(anchor_rng.index(anchors.size()));
                    }
                }
                std::vector<Tensor> rows;
                for (std::size_t i : pick) {
                    rows.push_back(anchor_inputs.row_tensor(i));
                }
                anchor_batch = Tensor::stack_rows(rows);
            }

            const double lr = scheduled_lr(config, step, total_steps);
            const auto r = objective.evaluate(model, batch, anchor_batch);
            result.history.push_back(StepRecord{step, epoch, r.loss, lr});
            for (auto* up : {&model.visual().adapter.up, &model.text().adapter.up}) {
                const std::string& name = up == &model.visual().adapter.up ? "s.visual.up" : "s.text.up";
                auto it = r.gradients.find(name);
                if (it == r.gradients.end()) {
                    continue;
                }
                auto w = up->data();
                auto g = it->second.data();
                for (std::size_t k = 0; k < w.size(); ++k) {
                    w[k] -= lr * g[k];
                }
            }
            ++step;
        }
    }
    return result;
}

void write_loss_csv(std::ostream& out, std::span<const StepRecord> history)
{
    out << "step,epoch,loss_cls,loss_acgd,loss_tsgr,loss_total,lr\n";
    out.precision(17);
    for (const auto& r : history) {
        out << r.step << ',' << r.epoch << ',' << r.loss.cls << ',' << r.loss.acgd << ',' << r.loss.tsgr << ','
            << r.loss.total << ',' << r.lr << '\n';
    }
}

} // namespace segp
