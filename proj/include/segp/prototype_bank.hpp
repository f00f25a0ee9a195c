// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/tensor.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace segp {

/// One unit-norm raw-space prototype per seen class, versioned by task.
class PrototypeBank {
public:
    [[nodiscard]] int version() const noexcept { return version_; }
    void set_version(int v) noexcept { version_ = v; }

    [[nodiscard]] bool contains(int class_id) const { return prototypes_.contains(class_id); }
    [[nodiscard]] const Tensor& at(int class_id) const
    {
        auto it = prototypes_.find(class_id);
        if (it == prototypes_.end()) {
            throw std::out_of_range("no prototype for class " + std::to_string(class_id));
        }
        return it->second;
    }

    /// Stores a prototype; throws unless it is unit-norm within 1e-10.
    void set(int class_id, Tensor prototype)
    {
        const double n = l2_norm(prototype.data());
        if (std::abs(n - 1.0) > 1e-10) {
            throw std::invalid_argument("prototype for class " + std::to_string(class_id) + " has norm "
                                        + std::to_string(n));
        }
        prototypes_.insert_or_assign(class_id, std::move(prototype));
    }

    [[nodiscard]] std::vector<int> classes() const
    {
        std::vector<int> ids;
        for (const auto& [id, _] : prototypes_) {
            ids.push_back(id);
        }
        return ids;
    }
    [[nodiscard]] std::size_t size() const noexcept { return prototypes_.size(); }
    [[nodiscard]] const std::map<int, Tensor>& entries() const noexcept { return prototypes_; }

    friend bool operator==(const PrototypeBank&, const PrototypeBank&) = default;

private:
    int version_ = 0;
    std::map<int, Tensor> prototypes_;
};

} // namespace segp
