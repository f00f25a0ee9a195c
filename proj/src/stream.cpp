// SPDX-License-Identifier: Apache-2.0

#include "segp/stream.hpp"

#include "segp/kernels.hpp"
#include "segp/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace segp {

namespace {

Tensor unit_gaussian(std::size_t n, Rng& rng)
{
    Tensor v({n});
    for (double& x : v.data()) {
        x = rng.normal();
    }
    kernels::normalize_rows(v);
    return v;
}

Tensor make_token(const Tensor& naming, const Tensor& direction, double noise, Rng& rng)
{
    Tensor t = kernels::matmul(direction, kernels::Trans::no, naming, kernels::Trans::yes);
    for (double& v : t.data()) {
        v += noise * rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(t.size())));
    }
    kernels::normalize_rows(t);
    return t;
}

Dataset sample_class(const ClassInfo& cls, std::size_t count, double spread, Rng& rng)
{
    const std::size_t dim = cls.direction.size();
    Dataset d;
    std::vector<double> rows;
    rows.reserve(count * dim);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t k = 0; k < dim; ++k) {
            rows.push_back(0.5 * (1.0 + cls.direction[k]) + rng.normal(0.0, spread));
        }
        d.labels.push_back(cls.id);
    }
    d.inputs = Tensor::matrix(count, dim, std::move(rows));
    return d;
}

} // namespace

void StreamSpec::validate() const
{
    if (num_tasks < 1) {
        throw std::invalid_argument("stream.num_tasks must be >= 1");
    }
    if (classes_per_task < 1 || train_per_class < 1 || test_per_class < 1 || input_dim < 1 || token_dim < 1) {
        throw std::invalid_argument("stream sizes must be >= 1");
    }
    if (!(overlap >= 0.0 && overlap <= 1.0)) {
        throw std::invalid_argument("stream.overlap must lie in [0, 1]");
    }
    if (!(spread >= 0.0) || !(token_noise >= 0.0)) {
        throw std::invalid_argument("stream.spread and stream.token_noise must be >= 0");
    }
}

Stream generate_stream(const StreamSpec& spec)
{
    spec.validate();
    Stream s;

    Rng naming_rng(spec.seed, "stream.naming");
    Tensor naming({spec.token_dim, spec.input_dim});
    for (double& v : naming.data()) {
        v = naming_rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(spec.input_dim)));
    }

    Rng dir_rng(spec.seed, "stream.directions");
    Rng token_rng(spec.seed, "stream.tokens");
    int next_id = 0;
    for (std::size_t t = 0; t < spec.num_tasks; ++t) {
        TaskSplit task;
        const std::size_t earlier = s.classes.size();
        for (std::size_t k = 0; k < spec.classes_per_task; ++k) {
            ClassInfo cls;
            cls.id = next_id++;
            Tensor fresh = unit_gaussian(spec.input_dim, dir_rng);
            if (earlier > 0 && spec.overlap > 0.0) {
                const std::size_t pick = dir_rng.index(earlier);
                cls.mixed_from = s.classes[pick].id;
                const Tensor& old = s.classes[pick].direction;
                for (std::size_t i = 0; i < fresh.size(); ++i) {
                    fresh[i] = (1.0 - spec.overlap) * fresh[i] + spec.overlap * old[i];
                }
                kernels::normalize_rows(fresh);
            }
            cls.direction = std::move(fresh);
            cls.token = make_token(naming, cls.direction, spec.token_noise, token_rng);
            task.classes.push_back(cls.id);
            s.classes.push_back(std::move(cls));
        }
        s.tasks.push_back(std::move(task));
    }

    for (std::size_t t = 0; t < spec.num_tasks; ++t) {
        TaskSplit& task = s.tasks[t];
        for (int id : task.classes) {
            const ClassInfo& cls = s.classes[static_cast<std::size_t>(id)];
            Rng train_rng(spec.seed, "stream.train", static_cast<std::uint64_t>(id));
            Rng test_rng(spec.seed, "stream.test", static_cast<std::uint64_t>(id));
            task.train = Dataset::concat(task.train, sample_class(cls, spec.train_per_class, spec.spread, train_rng));
            task.test = Dataset::concat(task.test, sample_class(cls, spec.test_per_class, spec.spread, test_rng));
        }
    }

    Rng pre_rng(spec.seed, "stream.pretrain");
    for (std::size_t k = 0; k < spec.pretrain_classes; ++k) {
        ClassInfo cls;
        cls.id = kPretrainClassBase + static_cast<int>(k);
        cls.direction = unit_gaussian(spec.input_dim, pre_rng);
        cls.token = make_token(naming, cls.direction, spec.token_noise, pre_rng);
        s.pretrain = Dataset::concat(s.pretrain, sample_class(cls, spec.pretrain_per_class, spec.spread, pre_rng));
        s.pretrain_classes.push_back(std::move(cls));
    }
    return s;
}

const Tensor& InMemoryStream::class_token(int class_id) const
{
    if (class_id >= kPretrainClassBase) {
        const auto k = static_cast<std::size_t>(class_id - kPretrainClassBase);
        return stream_.pretrain_classes.at(k).token;
    }
    return stream_.classes.at(static_cast<std::size_t>(class_id)).token;
}

std::vector<int> InMemoryStream::pretrain_class_ids() const
{
    std::vector<int> ids;
    for (const auto& c : stream_.pretrain_classes) {
        ids.push_back(c.id);
    }
    return ids;
}

} // namespace segp
