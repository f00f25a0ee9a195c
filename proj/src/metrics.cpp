// SPDX-License-Identifier: Apache-2.0

#include "segp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace segp {

AccuracyMatrix::AccuracyMatrix(std::size_t tasks) : tasks_(tasks), entries_(tasks * tasks), union_(tasks) {}

void AccuracyMatrix::set(std::size_t stage, std::size_t task, double accuracy)
{
    if (stage >= tasks_ || task >= tasks_) {
        throw std::out_of_range("accuracy matrix index out of range");
    }
    if (task > stage + 1) {
        throw std::invalid_argument("accuracy matrix: task " + std::to_string(task) + " is not evaluated at stage "
                                    + std::to_string(stage));
    }
    if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
        throw std::invalid_argument("accuracy outside [0,1]");
    }
    entries_[stage * tasks_ + task] = accuracy;
}

std::optional<double> AccuracyMatrix::get(std::size_t stage, std::size_t task) const
{
    if (stage >= tasks_ || task >= tasks_) {
        return std::nullopt;
    }
    return entries_[stage * tasks_ + task];
}

double AccuracyMatrix::at(std::size_t stage, std::size_t task) const
{
    auto v = get(stage, task);
    if (!v) {
        throw std::out_of_range("accuracy matrix has no entry R[" + std::to_string(stage) + "]["
                                + std::to_string(task) + "]");
    }
    return *v;
}

void AccuracyMatrix::set_union(std::size_t stage, double accuracy)
{
    if (stage >= tasks_) {
        throw std::out_of_range("accuracy matrix stage out of range");
    }
    if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
        throw std::invalid_argument("accuracy outside [0,1]");
    }
    union_[stage] = accuracy;
}

std::optional<double> AccuracyMatrix::union_accuracy(std::size_t stage) const
{
    return stage < tasks_ ? union_[stage] : std::nullopt;
}

std::size_t AccuracyMatrix::completed() const
{
    std::size_t n = 0;
    while (n < tasks_ && union_[n]) {
        ++n;
    }
    return n;
}

namespace {

void require_stages(const AccuracyMatrix& r, std::size_t t, std::size_t min, const char* what)
{
    if (t < min) {
        throw std::invalid_argument(std::string(what) + " needs at least " + std::to_string(min) + " stages");
    }
    if (t > r.tasks()) {
        throw std::out_of_range(std::string(what) + ": more stages than tasks");
    }
}

} // namespace

AvgLast avg_last(const AccuracyMatrix& r, std::size_t t)
{
    require_stages(r, t, 1, "avg_last");
    double sum = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
        auto u = r.union_accuracy(i);
        if (!u) {
            throw std::out_of_range("avg_last: stage " + std::to_string(i) + " has no union accuracy");
        }
        sum += *u;
    }
    return {sum / static_cast<double>(t), *r.union_accuracy(t - 1)};
}

double bwt(const AccuracyMatrix& r, std::size_t t)
{
    require_stages(r, t, 2, "bwt");
    double sum = 0.0;
    for (std::size_t j = 0; j + 1 < t; ++j) {
        sum += r.at(t - 1, j) - r.at(j, j);
    }
    return sum / static_cast<double>(t - 1);
}

double fwt(const AccuracyMatrix& r, std::size_t t)
{
    require_stages(r, t, 2, "fwt");
    double sum = 0.0;
    for (std::size_t j = 1; j < t; ++j) {
        sum += r.at(j - 1, j);
    }
    return sum / static_cast<double>(t - 1);
}

double forgetting(const AccuracyMatrix& r, std::size_t t)
{
    require_stages(r, t, 2, "forgetting");
    double sum = 0.0;
    for (std::size_t j = 0; j + 1 < t; ++j) {
        double best = r.at(j, j);
        for (std::size_t i = j + 1; i < t; ++i) {
            best = std::max(best, r.at(i, j));
        }
        sum += best - r.at(t - 1, j);
    }
    return sum / static_cast<double>(t - 1);
}

namespace {

void check_distribution(std::span<const double> p)
{
    double s = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("jsd: negative or non-finite probability");
        }
        s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) {
        throw std::invalid_argument("jsd: probabilities sum to " + std::to_string(s));
    }
}

} // namespace

double jsd(std::span<const double> p, std::span<const double> q)
{
    if (p.size() != q.size() || p.empty()) {
        throw std::invalid_argument("jsd: distributions must be non-empty and of equal length");
    }
    check_distribution(p);
    check_distribution(q);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0.0) {
            s += 0.5 * p[i] * std::log(p[i] / m);
        }
        if (q[i] > 0.0) {
            s += 0.5 * q[i] * std::log(q[i] / m);
        }
    }
    return std::clamp(s, 0.0, std::numbers::ln2);
}

const char* partition_name(Partition p) noexcept
{
    return p == Partition::boundary ? "boundary" : "core";
}

DriftProbe drift_probe(const DualTowerModel& teacher, const DualTowerModel& model, const Dataset& samples,
                       std::span<const int> classes, double tau)
{
    if (samples.empty()) {
        throw std::invalid_argument("drift_probe: no samples");
    }
    const Tensor before = teacher.clip_probs(samples.inputs, classes, tau);
    const Tensor after = model.clip_probs(samples.inputs, classes, tau);
    const Tensor v = teacher.encode_visual(samples.inputs);

    DriftProbe probe;
    probe.records.resize(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& rec = probe.records[i];
        rec.sample_id = i;
        const Tensor u = teacher.encode_text(samples.labels[i]);
        rec.own_class_cosine = dot(v.row(i), u.data());
        rec.before.assign(before.row(i).begin(), before.row(i).end());
        rec.after.assign(after.row(i).begin(), after.row(i).end());
        rec.jsd = jsd(rec.before, rec.after);
    }

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return probe.records[a].own_class_cosine < probe.records[b].own_class_cosine;
    });
    const std::size_t half = samples.size() / 2;
    auto& s = probe.summary;
    for (std::size_t k = 0; k < order.size(); ++k) {
        auto& rec = probe.records[order[k]];
        if (k < half) {
            rec.partition = Partition::boundary;
            s.boundary_jsd += rec.jsd;
            ++s.boundary_count;
        } else {
            rec.partition = Partition::core;
            s.core_jsd += rec.jsd;
            ++s.core_count;
        }
    }
    if (s.boundary_count > 0) {
        s.boundary_jsd /= static_cast<double>(s.boundary_count);
    }
    s.core_jsd /= static_cast<double>(s.core_count);
    return probe;
}

} // namespace segp
