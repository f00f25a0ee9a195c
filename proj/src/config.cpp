// SPDX-License-Identifier: Apache-2.0

#include "segp/config.hpp"

#include "segp/rng.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace segp {

namespace {

template <class T>
T parse_value(const std::string& key, const std::string& text)
{
    if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1" || text == "yes" || text == "on") {
            return true;
        }
        if (text == "false" || text == "0" || text == "no" || text == "off") {
            return false;
        }
        throw ConfigError(key + ": expected a boolean, got '" + text + "'");
    } else {
        T value{};
        const char* first = text.data();
        const char* last = first + text.size();
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc() || ptr != last) {
            throw ConfigError(key + ": cannot parse '" + text + "'");
        }
        return value;
    }
}

template <class T>
std::string format_value(T value)
{
    if constexpr (std::is_same_v<T, bool>) {
        return value ? "true" : "false";
    } else {
        char buf[64];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
        (void)ec;
        return std::string(buf, ptr);
    }
}

template <class T>
ConfigField field(std::string key, std::string help, T ExperimentConfig::*group_free)
{
    return ConfigField{
        key, std::move(help),
        [key, group_free](ExperimentConfig& c, const std::string& v) { c.*group_free = parse_value<T>(key, v); },
        [group_free](const ExperimentConfig& c) { return format_value(c.*group_free); }};
}

template <class G, class T>
ConfigField field(std::string key, std::string help, G ExperimentConfig::*group, T G::*member)
{
    return ConfigField{
        key, std::move(help),
        [key, group, member](ExperimentConfig& c, const std::string& v) {
            (c.*group).*member = parse_value<T>(key, v);
        },
        [group, member](const ExperimentConfig& c) { return format_value((c.*group).*member); }};
}

std::vector<ConfigField> make_fields()
{
    using C = ExperimentConfig;
    return {
        field("seed", "master seed", &C::seed),
        field("beta", "visual-branch weight in the fused logits", &C::beta),
        field("drift_stage", "stage (0-based) measured by the drift probe", &C::drift_stage),

        field("stream.num_tasks", "number of tasks T", &C::stream, &StreamSpec::num_tasks),
        field("stream.classes_per_task", "classes per task", &C::stream, &StreamSpec::classes_per_task),
        field("stream.train_per_class", "training samples per class", &C::stream, &StreamSpec::train_per_class),
        field("stream.test_per_class", "test samples per class", &C::stream, &StreamSpec::test_per_class),
        field("stream.input_dim", "input dimension", &C::stream, &StreamSpec::input_dim),
        field("stream.spread", "cluster standard deviation", &C::stream, &StreamSpec::spread),
        field("stream.overlap", "direction share with an earlier class", &C::stream, &StreamSpec::overlap),
        field("stream.token_dim", "class token dimension", &C::stream, &StreamSpec::token_dim),
        field("stream.token_noise", "noise in the token naming map", &C::stream, &StreamSpec::token_noise),
        field("stream.pretrain_classes", "held-out pretraining classes", &C::stream, &StreamSpec::pretrain_classes),
        field("stream.pretrain_per_class", "samples per pretraining class", &C::stream,
              &StreamSpec::pretrain_per_class),

        field("model.input_dim", "visual input dimension", &C::model, &ModelConfig::input_dim),
        field("model.raw_dim", "raw feature dimension D", &C::model, &ModelConfig::raw_dim),
        field("model.joint_dim", "joint embedding dimension d", &C::model, &ModelConfig::joint_dim),
        field("model.hidden_dim", "tower hidden width", &C::model, &ModelConfig::hidden_dim),
        field("model.lora_rank", "adapter rank", &C::model, &ModelConfig::lora_rank),
        field("model.class_token_dim", "class token dimension", &C::model, &ModelConfig::class_token_dim),
        field("model.temperature", "classification temperature", &C::model, &ModelConfig::temperature),

        field("pretrain.steps", "contrastive pretraining steps", &C::pretrain, &PretrainConfig::steps),
        field("pretrain.learning_rate", "pretraining learning rate", &C::pretrain, &PretrainConfig::learning_rate),
        field("pretrain.batch_size", "pretraining batch size", &C::pretrain, &PretrainConfig::batch_size),

        field("train.epochs", "epochs per task", &C::train, &TrainConfig::epochs),
        field("train.batch_size", "data batch size", &C::train, &TrainConfig::batch_size),
        field("train.anchor_batch_size", "anchor batch size", &C::train, &TrainConfig::anchor_batch_size),
        field("train.learning_rate", "initial SGD learning rate", &C::train, &TrainConfig::learning_rate),
        field("train.cosine_decay", "cosine decay to zero", &C::train, &TrainConfig::cosine_decay),
        field("train.acgd_weight", "lambda_ACGD", &C::train, &TrainConfig::acgd_weight),
        field("train.gr_weight", "lambda_GR", &C::train, &TrainConfig::gr_weight),
        field("train.acgd_temperature", "tau_A", &C::train, &TrainConfig::acgd_temperature),
        field("train.text_temperature", "tau_T", &C::train, &TrainConfig::text_temperature),
        field("train.neighbors", "k for text subgraphs", &C::train, &TrainConfig::neighbors),
        field("train.temperature", "classification loss temperature", &C::train, &TrainConfig::temperature),

        field("dpgd.epsilon", "l-inf perturbation budget", &C::dpgd, &DpgdConfig::epsilon),
        field("dpgd.step_size", "sign-step size gamma", &C::dpgd, &DpgdConfig::step_size),
        field("dpgd.iterations", "K_adv", &C::dpgd, &DpgdConfig::iterations),
        field("dpgd.visual_weight", "lambda_p", &C::dpgd, &DpgdConfig::visual_weight),
        field("dpgd.seeds_per_class", "K_seed", &C::dpgd, &DpgdConfig::seeds_per_class),
        field("dpgd.temperature", "temperature of the anchor objective", &C::dpgd, &DpgdConfig::temperature),

        field("flags.acgd", "anchor-guided distillation", &C::flags, &MethodFlags::acgd),
        field("flags.tsgr", "text subgraph regularization", &C::flags, &MethodFlags::tsgr),
        field("flags.prototype_transfer", "anchor-based prototype transfer", &C::flags,
              &MethodFlags::prototype_transfer),
        field("flags.visual_branch", "prototype branch at inference", &C::flags, &MethodFlags::visual_branch),
    };
}

void apply_node(ExperimentConfig& config, const YAML::Node& node, const std::string& prefix)
{
    if (!node.IsMap()) {
        throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected a mapping");
    }
    for (const auto& kv : node) {
        const std::string key = prefix.empty() ? kv.first.as<std::string>()
                                               : prefix + "." + kv.first.as<std::string>();
        if (kv.second.IsMap()) {
            apply_node(config, kv.second, key);
        } else if (kv.second.IsScalar()) {
            set_config_field(config, key, kv.second.Scalar());
        } else {
            throw ConfigError(key + ": expected a scalar");
        }
    }
}

} // namespace

const std::vector<ConfigField>& config_fields()
{
    static const std::vector<ConfigField> fields = make_fields();
    return fields;
}

void set_config_field(ExperimentConfig& config, const std::string& key, const std::string& value)
{
    for (const auto& f : config_fields()) {
        if (f.key == key) {
            f.set(config, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(ExperimentConfig& config, const std::string& yaml_text)
{
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    if (root.IsNull()) {
        return;
    }
    apply_node(config, root, "");
}

ExperimentConfig load_config_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream text;
    text << in.rdbuf();
    ExperimentConfig config;
    apply_config_text(config, text.str());
    return config;
}

std::string dump_config(const ExperimentConfig& config)
{
    std::string out;
    std::string group;
    for (const auto& f : config_fields()) {
        const auto dot = f.key.find('.');
        if (dot == std::string::npos) {
            out += f.key + ": " + f.get(config) + "\n";
            continue;
        }
        const std::string g = f.key.substr(0, dot);
        if (g != group) {
            out += g + ":\n";
            group = g;
        }
        out += "  " + f.key.substr(dot + 1) + ": " + f.get(config) + "\n";
    }
    return out;
}

std::string config_hash(const ExperimentConfig& config)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(dump_config(config))));
    return buf;
}

} // namespace segp
