// SPDX-License-Identifier: Apache-2.0

#include "segp/report.hpp"

#include "segp/config.hpp"
#include "segp/serialize.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace segp {

using nlohmann::ordered_json;

namespace {

std::string num(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

ordered_json optional_json(const std::optional<double>& v)
{
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json flags_json(const MethodFlags& f)
{
    return ordered_json{{"acgd", f.acgd},
                        {"tsgr", f.tsgr},
                        {"prototype_transfer", f.prototype_transfer},
                        {"visual_branch", f.visual_branch}};
}

struct Mean {
    double sum = 0.0;
    std::size_t n = 0;
    void add(const std::optional<double>& v)
    {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    [[nodiscard]] std::optional<double> value() const
    {
        return n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt;
    }
};

struct LabelMeans {
    std::string label;
    MethodFlags flags;
    std::size_t runs = 0;
    Mean avg, last, fwt, bwt, forgetting, boundary, core;
};

std::vector<LabelMeans> means_by_label(std::span<const RunRecord> records)
{
    std::vector<LabelMeans> rows;
    for (const auto& r : records) {
        auto it = std::find_if(rows.begin(), rows.end(), [&](const LabelMeans& m) { return m.label == r.label; });
        if (it == rows.end()) {
            rows.push_back(LabelMeans{r.label, r.flags});
            it = rows.end() - 1;
        }
        if (!r.completed) {
            continue;
        }
        ++it->runs;
        it->avg.add(r.metrics.avg);
        it->last.add(r.metrics.last);
        it->fwt.add(r.metrics.fwt);
        it->bwt.add(r.metrics.bwt);
        it->forgetting.add(r.metrics.forgetting);
        if (r.drift) {
            it->boundary.add(r.drift->summary.boundary_jsd);
            it->core.add(r.drift->summary.core_jsd);
        }
    }
    return rows;
}

std::string percent(const std::optional<double>& v)
{
    if (!v) {
        return "n/a";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream s(line);
    while (std::getline(s, cell, sep)) {
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == sep) {
        out.emplace_back();
    }
    return out;
}

double parse_double(const std::string& s)
{
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw std::invalid_argument("not a number: '" + s + "'");
    }
    return v;
}

template <class F>
std::filesystem::path write_file(const std::filesystem::path& path, F&& body)
{
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    body(out);
    out.flush();
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
    return path;
}

std::vector<std::filesystem::path> emit_run(const RunRecord& r, const std::filesystem::path& dir,
                                            const ExperimentConfig& config)
{
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    paths.push_back(write_file(dir / "metrics.json", [&](std::ostream& o) { o << run_metrics_json(r).dump(2) << '\n'; }));
    paths.push_back(write_file(dir / "accuracy_matrix.csv", [&](std::ostream& o) { write_accuracy_csv(o, r.matrix); }));
    paths.push_back(write_file(dir / "stage_accuracy.csv", [&](std::ostream& o) { write_stage_csv(o, r.matrix); }));
    paths.push_back(write_file(dir / "losses.csv", [&](std::ostream& o) { write_run_losses(o, r); }));
    if (r.drift) {
        paths.push_back(write_file(dir / "drift.csv", [&](std::ostream& o) { write_drift_csv(o, *r.drift); }));
    }
    paths.push_back(write_file(dir / "predictions.csv",
                               [&](std::ostream& o) { write_predictions_csv(o, r.predictions); }));
    paths.push_back(write_file(dir / "summary.txt", [&](std::ostream& o) { write_summary(o, std::span(&r, 1)); }));
    paths.push_back(write_file(dir / "prototypes.json",
                               [&](std::ostream& o) { o << io::bank_to_json(r.bank).dump(2) << '\n'; }));
    ExperimentConfig c = config;
    c.seed = r.seed;
    c.flags = r.flags;
    paths.push_back(write_file(dir / "config.yaml", [&](std::ostream& o) { o << dump_config(c); }));

    ordered_json stages = ordered_json::array();
    for (const auto& s : r.stages) {
        stages.push_back(ordered_json{{"stage", s.stage},
                                      {"classes", s.classes},
                                      {"steps", s.losses.size()},
                                      {"anchors", s.anchors},
                                      {"seed_target_prob", s.seed_target_prob},
                                      {"anchor_target_prob", s.anchor_target_prob},
                                      {"max_delta", s.max_delta},
                                      {"subgraphs", s.subgraphs},
                                      {"weight_fallbacks", s.weight_fallbacks},
                                      {"degenerate_transfers", s.degenerate_transfers},
                                      {"union_accuracy", s.union_accuracy}});
    }
    const auto record_path = dir / "run_record.json";
    ordered_json files = ordered_json::array();
    for (const auto& p : paths) {
        files.push_back(p.filename().string());
    }
    files.push_back(record_path.filename().string());
    const ordered_json record{{"label", r.label},
                              {"seed", r.seed},
                              {"config_hash", r.config_hash},
                              {"completed", r.completed},
                              {"error", r.error},
                              {"wall_seconds", r.wall_seconds},
                              {"metrics", run_metrics_json(r)},
                              {"stages", stages},
                              {"artifacts", files}};
    paths.push_back(write_file(record_path, [&](std::ostream& o) { o << record.dump(2) << '\n'; }));
    return paths;
}

} // namespace

ordered_json run_metrics_json(const RunRecord& r)
{
    ordered_json matrix = ordered_json::array();
    for (std::size_t i = 0; i < r.matrix.tasks(); ++i) {
        ordered_json row = ordered_json::array();
        for (std::size_t j = 0; j < r.matrix.tasks(); ++j) {
            row.push_back(optional_json(r.matrix.get(i, j)));
        }
        matrix.push_back(row);
    }
    ordered_json unions = ordered_json::array();
    for (std::size_t i = 0; i < r.matrix.tasks(); ++i) {
        unions.push_back(optional_json(r.matrix.union_accuracy(i)));
    }
    ordered_json drift = nullptr;
    if (r.drift) {
        const auto& s = r.drift->summary;
        drift = ordered_json{{"stage", r.drift_stage},
                             {"boundary_jsd", s.boundary_jsd},
                             {"core_jsd", s.core_jsd},
                             {"boundary_count", s.boundary_count},
                             {"core_count", s.core_count}};
    }
    ordered_json j{{"label", r.label},
                   {"seed", r.seed},
                   {"flags", flags_json(r.flags)},
                   {"config_hash", r.config_hash},
                   {"completed", r.completed},
                   {"avg", r.metrics.avg},
                   {"last", r.metrics.last},
                   {"fwt", optional_json(r.metrics.fwt)},
                   {"bwt", optional_json(r.metrics.bwt)},
                   {"forgetting", optional_json(r.metrics.forgetting)},
                   {"per_task_matrix", matrix},
                   {"union_accuracy", unions},
                   {"drift_summary", drift}};
    if (!r.completed) {
        j["error"] = r.error;
    }
    return j;
}

ordered_json grid_metrics_json(std::span<const RunRecord> records)
{
    ordered_json runs = ordered_json::array();
    for (const auto& r : records) {
        runs.push_back(run_metrics_json(r));
    }
    ordered_json rows = ordered_json::array();
    for (const auto& m : means_by_label(records)) {
        rows.push_back(ordered_json{{"label", m.label},
                                    {"flags", flags_json(m.flags)},
                                    {"completed_runs", m.runs},
                                    {"avg", optional_json(m.avg.value())},
                                    {"last", optional_json(m.last.value())},
                                    {"fwt", optional_json(m.fwt.value())},
                                    {"bwt", optional_json(m.bwt.value())},
                                    {"forgetting", optional_json(m.forgetting.value())},
                                    {"boundary_jsd", optional_json(m.boundary.value())},
                                    {"core_jsd", optional_json(m.core.value())}});
    }
    return ordered_json{{"rows", rows}, {"runs", runs}};
}

void write_accuracy_csv(std::ostream& out, const AccuracyMatrix& matrix)
{
    out << "stage";
    for (std::size_t j = 0; j < matrix.tasks(); ++j) {
        out << ",task_" << j;
    }
    out << '\n';
    for (std::size_t i = 0; i < matrix.tasks(); ++i) {
        out << i;
        for (std::size_t j = 0; j < matrix.tasks(); ++j) {
            out << ',';
            if (auto v = matrix.get(i, j)) {
                out << num(*v);
            }
        }
        out << '\n';
    }
}

AccuracyMatrix read_accuracy_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("accuracy csv: missing header");
    }
    const auto header = split(line, ',');
    if (header.empty() || header[0] != "stage") {
        throw std::invalid_argument("accuracy csv: header must start with 'stage'");
    }
    const std::size_t tasks = header.size() - 1;
    for (std::size_t j = 0; j < tasks; ++j) {
        if (header[j + 1] != "task_" + std::to_string(j)) {
            throw std::invalid_argument("accuracy csv: unexpected column '" + header[j + 1] + "'");
        }
    }
    AccuracyMatrix m(tasks);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto cells = split(line, ',');
        if (cells.size() != tasks + 1) {
            throw std::invalid_argument("accuracy csv: row has " + std::to_string(cells.size()) + " cells");
        }
        const auto stage = static_cast<std::size_t>(parse_double(cells[0]));
        for (std::size_t j = 0; j < tasks; ++j) {
            if (!cells[j + 1].empty()) {
                m.set(stage, j, parse_double(cells[j + 1]));
            }
        }
    }
    return m;
}

void write_stage_csv(std::ostream& out, const AccuracyMatrix& matrix)
{
    out << "stage,union_accuracy\n";
    for (std::size_t i = 0; i < matrix.tasks(); ++i) {
        if (auto v = matrix.union_accuracy(i)) {
            out << i << ',' << num(*v) << '\n';
        }
    }
}

void read_stage_csv(std::istream& in, AccuracyMatrix& matrix)
{
    std::string line;
    if (!std::getline(in, line) || line != "stage,union_accuracy") {
        throw std::invalid_argument("stage csv: expected header stage,union_accuracy");
    }
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto cells = split(line, ',');
        if (cells.size() != 2) {
            throw std::invalid_argument("stage csv: malformed row");
        }
        matrix.set_union(static_cast<std::size_t>(parse_double(cells[0])), parse_double(cells[1]));
    }
}

void write_drift_csv(std::ostream& out, const DriftProbe& probe)
{
    out << "sample_id,own_class_cosine,jsd,partition\n";
    for (const auto& r : probe.records) {
        out << r.sample_id << ',' << num(r.own_class_cosine) << ',' << num(r.jsd) << ',' << partition_name(r.partition)
            << '\n';
    }
}

void write_predictions_csv(std::ostream& out, std::span<const PredictionRecord> predictions)
{
    out << "sample_id,true_class,predicted_class,fused_logits\n";
    for (const auto& p : predictions) {
        out << p.sample_id << ',' << p.true_class << ',' << p.predicted_class << ',';
        for (std::size_t i = 0; i < p.fused_logits.size(); ++i) {
            out << (i ? " " : "") << num(p.fused_logits[i]);
        }
        out << '\n';
    }
}

void write_run_losses(std::ostream& out, const RunRecord& record)
{
    std::vector<StepRecord> all;
    std::size_t step_base = 0;
    std::size_t epoch_base = 0;
    for (const auto& s : record.stages) {
        std::size_t epochs = 0;
        for (StepRecord r : s.losses) {
            epochs = std::max(epochs, r.epoch + 1);
            r.step += step_base;
            r.epoch += epoch_base;
            all.push_back(r);
        }
        step_base += s.losses.size();
        epoch_base += epochs;
    }
    write_loss_csv(out, all);
}

void write_summary(std::ostream& out, std::span<const RunRecord> records)
{
    char line[256];
    std::snprintf(line, sizeof line, "%-22s %4s %4s %4s %4s %5s %8s %8s %8s %8s %10s\n", "method", "ACGD", "TSGR",
                  "PT", "V", "runs", "Last", "Avg", "FWT", "BWT", "Forgetting");
    out << line;
    auto mark = [](bool on) { return on ? "x" : "-"; };
    for (const auto& m : means_by_label(records)) {
        std::snprintf(line, sizeof line, "%-22s %4s %4s %4s %4s %5zu %8s %8s %8s %8s %10s\n", m.label.c_str(),
                      mark(m.flags.acgd), mark(m.flags.tsgr), mark(m.flags.prototype_transfer),
                      mark(m.flags.visual_branch), m.runs, percent(m.last.value()).c_str(),
                      percent(m.avg.value()).c_str(), percent(m.fwt.value()).c_str(), percent(m.bwt.value()).c_str(),
                      percent(m.forgetting.value()).c_str());
        out << line;
    }
    out << "accuracies in percent; mean over runs per method\n";
}

std::vector<std::filesystem::path> emit_report(std::span<const RunRecord> records, const std::filesystem::path& dir,
                                               const ExperimentConfig& config)
{
    if (records.empty()) {
        throw std::invalid_argument("emit_report: no records");
    }
    if (records.size() == 1) {
        return emit_run(records.front(), dir, config);
    }
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    paths.push_back(write_file(dir / "metrics.json",
                               [&](std::ostream& o) { o << grid_metrics_json(records).dump(2) << '\n'; }));
    paths.push_back(write_file(dir / "summary.txt", [&](std::ostream& o) { write_summary(o, records); }));
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        std::string name = std::to_string(i) + "_" + r.label + "_seed" + std::to_string(r.seed);
        for (char& ch : name) {
            if (ch == '=' || ch == ' ') {
                ch = '_';
            }
        }
        ExperimentConfig c = config;
        if (r.label.rfind("K_adv=", 0) == 0) {
            c.dpgd.iterations = std::stoul(r.label.substr(6));
        }
        auto sub = emit_run(r, dir / "runs" / name, c);
        paths.insert(paths.end(), sub.begin(), sub.end());
    }
    return paths;
}

} // namespace segp
