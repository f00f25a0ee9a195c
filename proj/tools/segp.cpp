// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 success, 1 configuration error,
// 2 runtime failure.

#include "segp/config.hpp"
#include "segp/experiment.hpp"
#include "segp/kernels.hpp"
#include "segp/report.hpp"
#include "segp/serialize.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace {

using namespace segp;

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Options shared by every experiment subcommand: preset, config file and one
/// flag per config field. Values are applied in that order, so a CLI flag
/// beats the file, which beats the preset.
struct ConfigOptions {
    std::string preset = "default";
    std::string file;
    std::map<std::string, std::string> overrides;

    void attach(CLI::App& app)
    {
        app.add_option("--preset", preset, "starting point: default (reference hyperparameters) or bench")
            ->check(CLI::IsMember({"default", "bench"}));
        app.add_option("-c,--config", file, "YAML config file")->check(CLI::ExistingFile);
        for (const auto& f : config_fields()) {
            app.add_option_function<std::string>(
                   "--" + f.key, [this, key = f.key](const std::string& v) { overrides[key] = v; }, f.help)
                ->group("Config fields");
        }
    }

    [[nodiscard]] ExperimentConfig build() const
    {
        ExperimentConfig c = preset == "bench" ? bench_preset() : ExperimentConfig{};
        if (!file.empty()) {
            std::ifstream in(file);
            std::stringstream text;
            text << in.rdbuf();
            apply_config_text(c, text.str());
        }
        for (const auto& [k, v] : overrides) {
            set_config_field(c, k, v);
        }
        c.validate();
        return c;
    }
};

std::vector<std::uint64_t> seed_list(const std::vector<std::uint64_t>& seeds, std::uint64_t base, std::size_t count)
{
    if (!seeds.empty()) {
        return seeds;
    }
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(base + i);
    }
    return out;
}

void require_complete(std::span<const RunRecord> records)
{
    for (const auto& r : records) {
        if (!r.completed) {
            throw RuntimeFailure("run " + r.label + " (seed " + std::to_string(r.seed) + ") failed at " + r.error);
        }
    }
}

int cmd_pretrain(const ConfigOptions& opts, const std::string& out)
{
    const ExperimentConfig c = opts.build();
    InMemoryStream source(generate_stream(stream_spec_for(c)));
    const DualTowerModel base = pretrained_base(c, source);
    const std::filesystem::path path(out);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    io::write_json(path, io::model_to_json(base));
    std::cout << "wrote " << path.string() << '\n';
    return kOk;
}

int cmd_run(const ConfigOptions& opts, const std::string& out, const std::string& base_path)
{
    const ExperimentConfig c = opts.build();
    InMemoryStream source(generate_stream(stream_spec_for(c)));
    const DualTowerModel base =
        base_path.empty() ? pretrained_base(c, source) : io::model_from_json(io::read_json(base_path));
    const RunRecord r = run_experiment(source, base, c);
    emit_report(std::span(&r, 1), out, c);
    write_summary(std::cout, std::span(&r, 1));
    require_complete(std::span(&r, 1));
    return kOk;
}

int cmd_ablate(const ConfigOptions& opts, const std::string& out, const std::vector<std::uint64_t>& seeds)
{
    const ExperimentConfig c = opts.build();
    const auto rows = ablation_rows();
    const auto records = run_grid(c, rows, seeds);
    emit_report(records, out, c);
    write_summary(std::cout, records);
    require_complete(records);
    return kOk;
}

int cmd_sweep(const ConfigOptions& opts, const std::string& out, const std::vector<std::size_t>& ks,
              const std::vector<std::uint64_t>& seeds)
{
    const ExperimentConfig c = opts.build();
    const auto records = run_kadv_sweep(c, ks, seeds);
    emit_report(records, out, c);
    std::ofstream curve(std::filesystem::path(out) / "kadv_curve.csv");
    curve << "k_adv,last,forgetting,anchor_target_prob,seed_target_prob\n";
    std::cout << "k_adv  last  forgetting  anchor_target_prob\n";
    for (std::size_t k = 0; k < ks.size(); ++k) {
        double last = 0, forget = 0, anchor = 0, seed = 0;
        std::size_t n = 0, stages = 0;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const auto& r = records[k * seeds.size() + s];
            if (!r.completed) {
                continue;
            }
            ++n;
            last += r.metrics.last;
            forget += r.metrics.forgetting.value_or(0.0);
            for (const auto& st : r.stages) {
                if (st.anchors > 0) {
                    anchor += st.anchor_target_prob;
                    seed += st.seed_target_prob;
                    ++stages;
                }
            }
        }
        const double dn = n ? static_cast<double>(n) : 1.0;
        const double ds = stages ? static_cast<double>(stages) : 1.0;
        curve << ks[k] << ',' << last / dn << ',' << forget / dn << ',' << anchor / ds << ',' << seed / ds << '\n';
        std::cout << ks[k] << "  " << last / dn << "  " << forget / dn << "  " << anchor / ds << '\n';
    }
    require_complete(records);
    return kOk;
}

int cmd_drift(const ConfigOptions& opts, const std::string& out)
{
    ExperimentConfig c = opts.build();
    if (c.drift_stage == 0 || c.drift_stage >= c.stream.num_tasks) {
        throw ConfigError("drift_stage must lie in [1, stream.num_tasks)");
    }
    // Only the stages up to the probed update matter.
    c.stream.num_tasks = c.drift_stage + 1;
    const RunRecord r = run_experiment(c);
    require_complete(std::span(&r, 1));
    std::filesystem::create_directories(out);
    std::ofstream csv(std::filesystem::path(out) / "drift.csv");
    write_drift_csv(csv, *r.drift);
    const auto& s = r.drift->summary;
    io::write_json(std::filesystem::path(out) / "drift_summary.json",
                   nlohmann::json{{"label", r.label},
                                  {"seed", r.seed},
                                  {"stage", r.drift_stage},
                                  {"boundary_jsd", s.boundary_jsd},
                                  {"core_jsd", s.core_jsd},
                                  {"boundary_count", s.boundary_count},
                                  {"core_count", s.core_count}});
    std::cout << r.label << " boundary_jsd=" << s.boundary_jsd << " core_jsd=" << s.core_jsd << '\n';
    return kOk;
}

int cmd_metrics(const std::string& dir)
{
    const std::filesystem::path d(dir);
    std::ifstream acc(d / "accuracy_matrix.csv");
    if (!acc) {
        throw RuntimeFailure("no accuracy_matrix.csv in " + dir);
    }
    AccuracyMatrix m = read_accuracy_csv(acc);
    std::ifstream stages(d / "stage_accuracy.csv");
    if (!stages) {
        throw RuntimeFailure("no stage_accuracy.csv in " + dir);
    }
    read_stage_csv(stages, m);
    const std::size_t t = m.completed();
    const AvgLast al = avg_last(m, t);
    nlohmann::ordered_json j{{"stages", t}, {"avg", al.avg}, {"last", al.last}};
    if (t >= 2) {
        j["fwt"] = fwt(m, t);
        j["bwt"] = bwt(m, t);
        j["forgetting"] = forgetting(m, t);
    }
    std::cout << j.dump(2) << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Desk-scale continual learning with anchor-guided distillation and prototype transfer"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);

    ConfigOptions pre_opts, run_opts, abl_opts, sweep_opts, drift_opts;
    std::string pre_out = "out/base_model.json";
    std::string run_out = "out/run", base_path;
    std::string abl_out = "out/ablate";
    std::string sweep_out = "out/sweep-kadv";
    std::string drift_out = "out/drift-probe";
    std::string metrics_dir;
    std::vector<std::uint64_t> abl_seeds, sweep_seeds;
    std::size_t abl_count = 5, sweep_count = 5;
    std::vector<std::size_t> k_values{0, 5, 10, 20, 40};

    auto* pre = app.add_subcommand("pretrain", "pretrain the base towers and save the model");
    pre_opts.attach(*pre);
    pre->add_option("-o,--out", pre_out, "model JSON path");

    auto* run = app.add_subcommand("run", "one continual-learning run");
    run_opts.attach(*run);
    run->add_option("-o,--out", run_out, "output directory");
    run->add_option("--base", base_path, "pretrained model JSON (default: pretrain now)")->check(CLI::ExistingFile);

    auto* abl = app.add_subcommand("ablate", "five-row component ablation over several seeds");
    abl_opts.attach(*abl);
    abl->add_option("-o,--out", abl_out, "output directory");
    abl->add_option("--seeds", abl_seeds, "explicit seed list")->delimiter(',');
    abl->add_option("--num-seeds", abl_count, "seeds seed, seed+1, ... when --seeds is absent");

    auto* sweep = app.add_subcommand("sweep-kadv", "full method over several K_adv values");
    sweep_opts.attach(*sweep);
    sweep->add_option("-o,--out", sweep_out, "output directory");
    sweep->add_option("--k-values", k_values, "K_adv values")->delimiter(',');
    sweep->add_option("--seeds", sweep_seeds, "explicit seed list")->delimiter(',');
    sweep->add_option("--num-seeds", sweep_count, "seeds seed, seed+1, ... when --seeds is absent");

    auto* drift = app.add_subcommand("drift-probe", "cross-modal drift of one update, split boundary/core");
    drift_opts.attach(*drift);
    drift->add_option("-o,--out", drift_out, "output directory");

    auto* met = app.add_subcommand("metrics", "recompute metrics from a run directory");
    met->add_option("dir", metrics_dir, "directory with accuracy_matrix.csv and stage_accuracy.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kConfigError;
    }

    try {
        if (threads > 0) {
            kernels::set_threads(threads);
        }
        if (*pre) {
            return cmd_pretrain(pre_opts, pre_out);
        }
        if (*run) {
            return cmd_run(run_opts, run_out, base_path);
        }
        if (*abl) {
            const auto base = abl_opts.build().seed;
            return cmd_ablate(abl_opts, abl_out, seed_list(abl_seeds, base, abl_count));
        }
        if (*sweep) {
            const auto base = sweep_opts.build().seed;
            return cmd_sweep(sweep_opts, sweep_out, k_values, seed_list(sweep_seeds, base, sweep_count));
        }
        if (*drift) {
            return cmd_drift(drift_opts, drift_out);
        }
        return cmd_metrics(metrics_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
}
