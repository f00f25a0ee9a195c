// SPDX-License-Identifier: Apache-2.0

#include "segp/protopath.hpp"

#include "segp/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace segp {

using kernels::Trans;

std::map<int, Tensor> estimate_new_prototypes(const DualTowerModel& model, const Dataset& data,
                                              std::span<const int> classes)
{
    const std::size_t dim = model.config().raw_dim;
    std::map<int, Tensor> sums;
    std::map<int, std::size_t> counts;
    for (int c : classes) {
        sums.emplace(c, Tensor({dim}));
        counts[c] = 0;
    }
    if (!data.empty()) {
        const Tensor r = model.encode_raw(data.inputs);
        for (std::size_t i = 0; i < data.size(); ++i) {
            auto it = sums.find(data.labels[i]);
            if (it == sums.end()) {
                continue;
            }
            auto row = r.row(i);
            for (std::size_t k = 0; k < dim; ++k) {
                it->second[k] += row[k];
            }
            ++counts[data.labels[i]];
        }
    }
    for (auto& [c, s] : sums) {
        if (counts[c] == 0) {
            throw std::invalid_argument("estimate_new_prototypes: class " + std::to_string(c) + " has no samples");
        }
        if (kernels::normalize_rows(s) != 0) {
            throw std::runtime_error("estimate_new_prototypes: class " + std::to_string(c)
                                     + " has a degenerate feature sum");
        }
    }
    return sums;
}

Tensor anchor_displacements(const Snapshot& teacher, const DualTowerModel& model, const Tensor& anchor_inputs)
{
    Tensor d = model.encode_raw(anchor_inputs);
    const Tensor before = teacher->encode_raw(anchor_inputs);
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] -= before[i];
    }
    return d;
}

Reliability reliability_weights(const Snapshot& teacher, const Tensor& anchor_inputs, const Tensor& prototype)
{
    if (anchor_inputs.size() == 0) {
        throw std::invalid_argument("reliability_weights: no anchors");
    }
    const Tensor r = teacher->encode_raw(anchor_inputs);
    Reliability out;
    double total = 0.0;
    for (std::size_t i = 0; i < r.rows(); ++i) {
        out.scores.push_back(dot(r.row(i), prototype.data()));
        total += out.scores.back();
    }
    const double n = static_cast<double>(out.scores.size());
    out.fallback = !(total > 0.0);
    for (double a : out.scores) {
        out.weights.push_back(out.fallback ? 1.0 / n : a / total);
    }
    return out;
}

Tensor class_drift(const Tensor& displacements, std::span<const double> weights)
{
    if (displacements.rows() != weights.size()) {
        throw std::invalid_argument("class_drift: " + std::to_string(weights.size()) + " weights for "
                                    + std::to_string(displacements.rows()) + " displacements");
    }
    Tensor delta({displacements.cols()});
    for (std::size_t i = 0; i < weights.size(); ++i) {
        auto row = displacements.row(i);
        for (std::size_t k = 0; k < row.size(); ++k) {
            delta[k] += weights[i] * row[k];
        }
    }
    return delta;
}

double proximity_gate(const Snapshot& teacher, const Tensor& anchor_inputs, const Tensor& prototype)
{
    if (anchor_inputs.size() == 0) {
        throw std::invalid_argument("proximity_gate: no anchors");
    }
    const Tensor r = teacher->encode_raw(anchor_inputs);
    double s = 0.0;
    for (std::size_t i = 0; i < r.rows(); ++i) {
        s += dot(r.row(i), prototype.data());
    }
    return s / static_cast<double>(r.rows());
}

std::map<int, ClassDrift> estimate_drift(const Snapshot& teacher, const DualTowerModel& model,
                                         const AnchorSet& anchors, const PrototypeBank& bank)
{
    std::map<int, ClassDrift> drifts;
    for (int c : anchors.target_classes()) {
        std::vector<Tensor> rows;
        for (const Anchor* a : anchors.for_class(c)) {
            rows.push_back(a->x_adv);
        }
        const Tensor x = Tensor::stack_rows(rows);
        const Tensor& mu = bank.at(c);
        ClassDrift d;
        d.reliability = reliability_weights(teacher, x, mu);
        d.displacement = class_drift(anchor_displacements(teacher, model, x), d.reliability.weights);
        d.gate = proximity_gate(teacher, x, mu);
        drifts.emplace(c, std::move(d));
    }
    return drifts;
}

TransferReport transfer_prototypes(PrototypeBank& bank, const std::map<int, ClassDrift>& drifts,
                                   const std::map<int, Tensor>& new_prototypes, int version)
{
    TransferReport report;
    for (const auto& [c, d] : drifts) {
        if (d.reliability.fallback) {
            report.weight_fallbacks.push_back(c);
        }
        Tensor mu = bank.at(c);
        bool moved = false;
        for (std::size_t k = 0; k < mu.size(); ++k) {
            const double step = d.gate * d.displacement[k];
            moved = moved || step != 0.0;
            mu[k] += step;
        }
        // Renormalizing an untouched unit vector can still flip its last bit.
        if (!moved) {
            continue;
        }
        if (l2_norm(mu.data()) < kernels::kNormFloor) {
            report.degenerate.push_back(c);
            continue;
        }
        kernels::normalize_rows(mu);
        bank.set(c, std::move(mu));
    }
    for (const auto& [c, mu] : new_prototypes) {
        bank.set(c, mu);
    }
    bank.set_version(version);
    return report;
}

namespace {

int argmax_smallest_id(std::span<const double> scores, std::span<const int> classes)
{
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.size(); ++j) {
        if (scores[j] > scores[best] || (scores[j] == scores[best] && classes[j] < classes[best])) {
            best = j;
        }
    }
    return classes[best];
}

Tensor prototype_matrix(const PrototypeBank& bank, std::span<const int> classes)
{
    std::vector<Tensor> rows;
    rows.reserve(classes.size());
    for (int c : classes) {
        rows.push_back(bank.at(c));
    }
    return Tensor::stack_rows(rows);
}

} // namespace

Prediction dual_path_predict(const DualTowerModel& model, const PrototypeBank& bank, const Tensor& x,
                             std::span<const int> classes, double beta)
{
    const Tensor batch = Tensor::matrix(1, x.size(), x.values());
    return dual_path_predict_batch(model, bank, batch, classes, beta).front();
}

Prediction fuse_logits(std::span<const double> clip, std::span<const double> visual, std::span<const int> classes,
                       double beta)
{
    if (clip.size() != classes.size() || (beta != 0.0 && visual.size() != classes.size())) {
        throw std::invalid_argument("fuse_logits: score and class counts differ");
    }
    Prediction p;
    p.fused.assign(clip.begin(), clip.end());
    if (beta != 0.0) {
        for (std::size_t j = 0; j < p.fused.size(); ++j) {
            p.fused[j] += beta * visual[j];
        }
    }
    p.predicted = argmax_smallest_id(p.fused, classes);
    return p;
}

std::vector<Prediction> dual_path_predict_batch(const DualTowerModel& model, const PrototypeBank& bank,
                                                const Tensor& inputs, std::span<const int> classes, double beta)
{
    if (classes.empty()) {
        throw std::invalid_argument("dual_path_predict: empty class set");
    }
    const Tensor protos = prototype_matrix(bank, classes); // checks coverage even when beta == 0
    const Tensor clip = model.clip_logits(inputs, classes);
    const Tensor sv = beta != 0.0 ? kernels::matmul(model.encode_raw(inputs), Trans::no, protos, Trans::yes)
                                  : Tensor({0, 0});
    std::vector<Prediction> out(clip.rows());
    const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static) if (n > 256)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        out[r] = fuse_logits(clip.row(r), beta != 0.0 ? sv.row(r) : std::span<const double>{}, classes, beta);
    }
    return out;
}

std::vector<int> clip_predict_batch(const DualTowerModel& model, const Tensor& inputs, std::span<const int> classes)
{
    if (classes.empty()) {
        throw std::invalid_argument("clip_predict_batch: empty class set");
    }
    const Tensor logits = model.clip_logits(inputs, classes);
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = argmax_smallest_id(logits.row(i), classes);
    }
    return out;
}

} // namespace segp
