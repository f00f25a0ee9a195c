// SPDX-License-Identifier: Apache-2.0

#include "segp/serialize.hpp"

#include <fstream>

namespace segp::io {

using nlohmann::json;

namespace {

const json& field(const json& j, const char* key)
{
    if (!j.is_object() || !j.contains(key)) {
        throw FormatError(std::string("missing field '") + key + "'");
    }
    return j.at(key);
}

Tensor shaped(const json& j, std::vector<std::size_t> expected, const char* what)
{
    Tensor t = tensor_from_json(j);
    if (t.shape() != expected) {
        throw FormatError(std::string(what) + ": expected shape " + shape_string(expected) + ", got "
                          + shape_string(t.shape()));
    }
    return t;
}

json tower_to_json(const Tower& t)
{
    return json{{"hidden", tensor_to_json(t.hidden)},
                {"output", tensor_to_json(t.output)},
                {"adapter",
                 {{"layer", t.adapter.layer},
                  {"down", tensor_to_json(t.adapter.down)},
                  {"up", tensor_to_json(t.adapter.up)}}}};
}

Tower tower_from_json(const json& j, std::size_t in, std::size_t hidden, std::size_t out, std::size_t rank)
{
    Tower t;
    t.hidden = shaped(field(j, "hidden"), {in, hidden}, "tower.hidden");
    t.output = shaped(field(j, "output"), {hidden, out}, "tower.output");
    const json& a = field(j, "adapter");
    t.adapter.layer = field(a, "layer").get<std::string>();
    t.adapter.down = shaped(field(a, "down"), {hidden, rank}, "adapter.down");
    t.adapter.up = shaped(field(a, "up"), {rank, out}, "adapter.up");
    return t;
}

} // namespace

json tensor_to_json(const Tensor& t)
{
    return json{{"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from_json(const json& j)
{
    try {
        return Tensor(field(j, "shape").get<std::vector<std::size_t>>(), field(j, "data").get<std::vector<double>>());
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad tensor: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("bad tensor: ") + e.what());
    }
}

json model_to_json(const DualTowerModel& model)
{
    const ModelConfig& c = model.config();
    json tokens = json::array();
    for (const auto& [id, token] : model.tokens()) {
        tokens.push_back(json{{"class", id}, {"token", tensor_to_json(token)}});
    }
    return json{{"format", "segp-model"},
                {"version", kModelFormatVersion},
                {"config",
                 {{"input_dim", c.input_dim},
                  {"raw_dim", c.raw_dim},
                  {"joint_dim", c.joint_dim},
                  {"hidden_dim", c.hidden_dim},
                  {"lora_rank", c.lora_rank},
                  {"class_token_dim", c.class_token_dim},
                  {"temperature", c.temperature}}},
                {"visual", tower_to_json(model.visual())},
                {"projection", tensor_to_json(model.projection())},
                {"text", tower_to_json(model.text())},
                {"tokens", tokens}};
}

DualTowerModel model_from_json(const json& j)
{
    if (field(j, "format") != "segp-model") {
        throw FormatError("not a segp-model document");
    }
    const int version = field(j, "version").get<int>();
    if (version != kModelFormatVersion) {
        throw FormatError("unsupported model format version " + std::to_string(version));
    }
    try {
        const json& cj = field(j, "config");
        ModelConfig c;
        c.input_dim = field(cj, "input_dim").get<std::size_t>();
        c.raw_dim = field(cj, "raw_dim").get<std::size_t>();
        c.joint_dim = field(cj, "joint_dim").get<std::size_t>();
        c.hidden_dim = field(cj, "hidden_dim").get<std::size_t>();
        c.lora_rank = field(cj, "lora_rank").get<std::size_t>();
        c.class_token_dim = field(cj, "class_token_dim").get<std::size_t>();
        c.temperature = field(cj, "temperature").get<double>();
        c.validate();

        Tower visual = tower_from_json(field(j, "visual"), c.input_dim, c.hidden_dim, c.raw_dim, c.lora_rank);
        Tensor projection = shaped(field(j, "projection"), {c.raw_dim, c.joint_dim}, "projection");
        Tower text = tower_from_json(field(j, "text"), c.class_token_dim, c.hidden_dim, c.joint_dim, c.lora_rank);
        std::map<int, Tensor> tokens;
        for (const json& t : field(j, "tokens")) {
            tokens.emplace(field(t, "class").get<int>(),
                           shaped(field(t, "token"), {c.class_token_dim}, "token"));
        }
        return DualTowerModel(c, std::move(visual), std::move(projection), std::move(text), std::move(tokens));
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad model document: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("bad model document: ") + e.what());
    }
}

json bank_to_json(const PrototypeBank& bank)
{
    json protos = json::array();
    for (const auto& [id, mu] : bank.entries()) {
        protos.push_back(json{{"class", id}, {"prototype", tensor_to_json(mu)}});
    }
    return json{{"task_version", bank.version()}, {"prototypes", protos}};
}

PrototypeBank bank_from_json(const json& j)
{
    PrototypeBank bank;
    try {
        bank.set_version(field(j, "task_version").get<int>());
        for (const json& p : field(j, "prototypes")) {
            bank.set(field(p, "class").get<int>(), tensor_from_json(field(p, "prototype")));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad prototype bank: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("bad prototype bank: ") + e.what());
    }
    return bank;
}

json anchors_to_json(const AnchorSet& anchors)
{
    json out = json::array();
    for (const auto& a : anchors.anchors) {
        out.push_back(json{{"target_class", a.target_class},
                           {"seed_index", a.origin.sample_index},
                           {"delta", a.delta.values()},
                           {"x_adv", a.x_adv.values()}});
    }
    return out;
}

void write_json(const std::filesystem::path& path, const json& j)
{
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    out << j.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

json read_json(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

} // namespace segp::io
