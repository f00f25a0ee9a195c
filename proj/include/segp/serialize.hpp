// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/anchor.hpp"
#include "segp/model.hpp"
#include "segp/prototype_bank.hpp"
#include "segp/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

/// JSON persistence. Every tensor is {"shape": [...], "data": [...]} in
/// row-major order; doubles are written in shortest round-trip form, so a
/// save/load cycle is bit-exact.
namespace segp::io {

inline constexpr int kModelFormatVersion = 1;

/// Thrown for malformed or incompatible documents.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[nodiscard]] nlohmann::json tensor_to_json(const Tensor& t);
[[nodiscard]] Tensor tensor_from_json(const nlohmann::json& j);

[[nodiscard]] nlohmann::json model_to_json(const DualTowerModel& model);
[[nodiscard]] DualTowerModel model_from_json(const nlohmann::json& j);

[[nodiscard]] nlohmann::json bank_to_json(const PrototypeBank& bank);
[[nodiscard]] PrototypeBank bank_from_json(const nlohmann::json& j);

/// Array of {target_class, seed_index, delta, x_adv}.
[[nodiscard]] nlohmann::json anchors_to_json(const AnchorSet& anchors);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
[[nodiscard]] nlohmann::json read_json(const std::filesystem::path& path);

} // namespace segp::io
