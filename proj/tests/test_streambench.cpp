// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include "segp/config.hpp"
#include "segp/experiment.hpp"
#include "segp/report.hpp"
#include "segp/serialize.hpp"
#include "segp/stream.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sys/wait.h>
#include <sstream>

using namespace segp;
namespace fs = std::filesystem;

namespace {

// Seconds-scale configuration for end-to-end checks.
ExperimentConfig tiny()
{
    ExperimentConfig c;
    c.stream.num_tasks = 3;
    c.stream.classes_per_task = 2;
    c.stream.train_per_class = 20;
    c.stream.test_per_class = 10;
    c.stream.pretrain_classes = 8;
    c.stream.pretrain_per_class = 8;
    c.pretrain.steps = 20;
    c.pretrain.learning_rate = 0.1;
    c.train.epochs = 2;
    c.train.batch_size = 16;
    c.train.learning_rate = 0.1;
    c.train.neighbors = 3;
    c.dpgd.iterations = 3;
    return c;
}

/// Records every split request. Training data of task t may only be requested
/// once the runner has moved to stage t, and never again afterwards.
class TrackingStream : public StreamSource {
public:
    explicit TrackingStream(Stream s) : inner_(std::move(s)) {}

    std::size_t num_tasks() const override { return inner_.num_tasks(); }
    const std::vector<int>& task_classes(std::size_t t) const override { return inner_.task_classes(t); }
    const Tensor& class_token(int c) const override { return inner_.class_token(c); }
    const Dataset& train_split(std::size_t t) override
    {
        train_requests.push_back(t);
        return inner_.train_split(t);
    }
    const Dataset& test_split(std::size_t t) override { return inner_.test_split(t); }
    const Dataset& pretrain_split() override
    {
        ++pretrain_requests;
        return inner_.pretrain_split();
    }
    std::vector<int> pretrain_class_ids() const override { return inner_.pretrain_class_ids(); }

    std::vector<std::size_t> train_requests;
    int pretrain_requests = 0;

private:
    InMemoryStream inner_;
};

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("segp_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(SEGP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunRecord fake_record(const std::string& label, MethodFlags flags, std::uint64_t seed, double last)
{
    RunRecord r;
    r.label = label;
    r.flags = flags;
    r.seed = seed;
    r.completed = true;
    r.metrics = RunMetrics{last + 0.1, last, 0.25, -0.125, 0.125};
    r.matrix = AccuracyMatrix(2);
    return r;
}

} // namespace

TEST_SUITE("streambench") {

TEST_CASE("stream generation")
{
    StreamSpec spec;
    spec.seed = 11;
    const Stream a = generate_stream(spec);
    const Stream b = generate_stream(spec);
    REQUIRE(a.tasks.size() == spec.num_tasks);
    std::set<int> seen;
    for (std::size_t t = 0; t < a.tasks.size(); ++t) {
        CHECK(a.tasks[t].train.inputs == b.tasks[t].train.inputs);
        CHECK(a.tasks[t].test.inputs == b.tasks[t].test.inputs);
        CHECK(a.tasks[t].classes.size() == spec.classes_per_task);
        CHECK(a.tasks[t].train.size() == spec.classes_per_task * spec.train_per_class);
        CHECK(a.tasks[t].test.size() == spec.classes_per_task * spec.test_per_class);
        for (int c : a.tasks[t].classes) {
            CHECK(seen.insert(c).second); // disjoint across tasks
        }
        for (int y : a.tasks[t].train.labels) {
            CHECK(std::find(a.tasks[t].classes.begin(), a.tasks[t].classes.end(), y) != a.tasks[t].classes.end());
        }
        for (double v : a.tasks[t].train.inputs.data()) {
            CHECK(std::isfinite(v));
        }
    }
    for (const auto& c : a.pretrain_classes) {
        CHECK(c.id >= kPretrainClassBase);
    }

    spec.overlap = 0.0;
    for (const auto& c : generate_stream(spec).classes) {
        CHECK(c.mixed_from == -1);
    }
    spec.overlap = 1.5;
    CHECK_THROWS_AS((void)generate_stream(spec), std::invalid_argument);
    spec.overlap = 0.5;
    spec.num_tasks = 0;
    CHECK_THROWS_AS((void)generate_stream(spec), std::invalid_argument);
}

TEST_CASE("overlap pulls new classes toward old ones")
{
    auto mean_max_cosine = [](double overlap) {
        double total = 0.0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            StreamSpec spec;
            spec.overlap = overlap;
            spec.seed = seed;
            const Stream s = generate_stream(spec);
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t t = 1; t < s.tasks.size(); ++t) {
                for (int c : s.tasks[t].classes) {
                    double best = -1.0;
                    for (std::size_t e = 0; e < t; ++e) {
                        for (int o : s.tasks[e].classes) {
                            const auto& a = s.classes[static_cast<std::size_t>(c)].direction;
                            const auto& b = s.classes[static_cast<std::size_t>(o)].direction;
                            best = std::max(best, dot(a.data(), b.data()) / (l2_norm(a.data()) * l2_norm(b.data())));
                        }
                    }
                    sum += best;
                    ++n;
                }
            }
            total += sum / static_cast<double>(n);
        }
        return total / 10.0;
    };
    CHECK(mean_max_cosine(0.8) > mean_max_cosine(0.0));
}

TEST_CASE("runner is exemplar-free")
{
    const ExperimentConfig c = tiny();
    TrackingStream source(generate_stream(stream_spec_for(c)));
    const DualTowerModel base = pretrained_base(c, source);
    CHECK(source.pretrain_requests == 1);
    const RunRecord r = run_experiment(source, base, c);
    REQUIRE(r.completed);
    REQUIRE_FALSE(source.train_requests.empty());
    std::size_t stage = 0;
    for (std::size_t t : source.train_requests) {
        CHECK(t >= stage); // never back to an earlier task's train split
        stage = t;
    }
    CHECK(stage == c.stream.num_tasks - 1);
}

TEST_CASE("runs are deterministic, also across thread counts")
{
    ExperimentConfig c = tiny();
    const RunRecord a = run_experiment(c);
    const RunRecord b = run_experiment(c);
    REQUIRE(a.completed);
    CHECK(run_metrics_json(a).dump() == run_metrics_json(b).dump());

    const int saved = kernels::max_threads();
    kernels::set_threads(3);
    const RunRecord threaded = run_experiment(c);
    kernels::set_threads(saved);
    CHECK(run_metrics_json(a).dump() == run_metrics_json(threaded).dump());
    CHECK(a.bank == threaded.bank);

    // Flags never change the data a run sees.
    c.flags = MethodFlags::none();
    const RunRecord plain = run_experiment(c);
    CHECK(plain.completed);
    CHECK(plain.label == "CE");
    CHECK(plain.stages.front().classes == a.stages.front().classes);
    for (const auto& s : plain.stages) {
        CHECK(s.anchors == 0);
        CHECK(s.subgraphs == 0);
    }
}

TEST_CASE("run record contents")
{
    const ExperimentConfig c = tiny();
    const RunRecord r = run_experiment(c);
    REQUIRE(r.completed);
    CHECK(r.label == "CE+ACGD+TSGR+PT+V");
    CHECK(r.stages.size() == 3);
    CHECK(r.stages[0].anchors == 0);
    CHECK(r.stages[1].anchors == 2 * c.dpgd.seeds_per_class);
    CHECK(r.stages[1].max_delta <= c.dpgd.epsilon);
    CHECK(r.stages[1].subgraphs == 2);
    CHECK(r.matrix.completed() == 3);
    CHECK(r.metrics.fwt.has_value());
    CHECK(r.drift.has_value());
    CHECK(r.drift->records.size() == 2 * c.stream.test_per_class);
    CHECK(r.predictions.size() == 3 * 2 * c.stream.test_per_class);
    CHECK(r.bank.size() == 6);
    for (const auto& [id, mu] : r.bank.entries()) {
        CHECK(std::abs(l2_norm(mu.data()) - 1.0) < 1e-10);
    }
    CHECK(r.config_hash == config_hash(c));
}

TEST_CASE("stage failures keep a partial record")
{
    ExperimentConfig c = tiny();
    Stream s = generate_stream(stream_spec_for(c));
    s.tasks[1].train.labels[0] = 999; // label outside the task's classes
    InMemoryStream source(std::move(s));
    const DualTowerModel base = pretrained_base(c, source);
    const RunRecord r = run_experiment(source, base, c);
    CHECK_FALSE(r.completed);
    CHECK_FALSE(r.error.empty());
    CHECK(r.stages.size() == 1);
}

TEST_CASE("config file and overrides")
{
    ExperimentConfig c;
    apply_config_text(c, "seed: 9\ntrain:\n  learning_rate: 0.25\n  epochs: 3\nflags:\n  tsgr: false\n");
    CHECK(c.seed == 9);
    CHECK(c.train.learning_rate == 0.25);
    CHECK(c.train.epochs == 3);
    CHECK_FALSE(c.flags.tsgr);
    set_config_field(c, "train.epochs", "4");
    CHECK(c.train.epochs == 4);

    CHECK_THROWS_AS(apply_config_text(c, "train:\n  nope: 1\n"), ConfigError);
    CHECK_THROWS_AS(set_config_field(c, "train.epochs", "many"), ConfigError);
    CHECK_THROWS_AS(set_config_field(c, "stream.seed", "1"), ConfigError);

    // The dump round-trips and the hash follows it.
    ExperimentConfig back;
    apply_config_text(back, dump_config(c));
    CHECK(dump_config(back) == dump_config(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c) != config_hash(ExperimentConfig{}));
    CHECK(config_hash(c).size() == 16);

    // Every field has a key and survives a set/get cycle.
    for (const auto& f : config_fields()) {
        ExperimentConfig x;
        const std::string v = f.get(x);
        f.set(x, v);
        CHECK(f.get(x) == v);
    }

    ExperimentConfig bad;
    bad.model.input_dim = 7;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("reports")
{
    const ExperimentConfig c = tiny();
    CHECK_THROWS_AS((void)emit_report(std::span<const RunRecord>{}, scratch("empty"), c), std::invalid_argument);

    // One record: one summary row and the flat artifact set.
    const RunRecord r = run_experiment(c);
    const fs::path one = scratch("one");
    (void)emit_report(std::span(&r, 1), one, c);
    for (const char* f : {"metrics.json", "accuracy_matrix.csv", "stage_accuracy.csv", "losses.csv", "drift.csv",
                          "predictions.csv", "summary.txt", "prototypes.json", "config.yaml", "run_record.json"}) {
        CHECK(fs::exists(one / f));
    }
    const std::string summary = slurp(one / "summary.txt");
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 3);
    CHECK(slurp(one / "accuracy_matrix.csv").rfind("stage,task_0,task_1,task_2\n", 0) == 0);
    CHECK(slurp(one / "drift.csv").rfind("sample_id,own_class_cosine,jsd,partition\n", 0) == 0);
    CHECK(slurp(one / "losses.csv").rfind("step,epoch,loss_cls,loss_acgd,loss_tsgr,loss_total,lr\n", 0) == 0);
    CHECK(io::read_json(one / "metrics.json").at("label") == r.label);
    CHECK(io::bank_from_json(io::read_json(one / "prototypes.json")) == r.bank);
    CHECK(load_config_file(one / "config.yaml").seed == c.seed);

    // The accuracy CSV reads back to the same matrix.
    std::ifstream in(one / "accuracy_matrix.csv");
    const AccuracyMatrix back = read_accuracy_csv(in);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(back.get(i, j) == r.matrix.get(i, j));
        }
    }
}

TEST_CASE("ablation summary golden file")
{
    std::vector<RunRecord> records;
    const auto rows = ablation_rows();
    REQUIRE(rows.size() == 5);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        records.push_back(fake_record(rows[i].label, rows[i].flags, 0, 0.5 + 0.0625 * static_cast<double>(i)));
    }
    std::ostringstream out;
    write_summary(out, records);
    const std::string golden =
        "method                 ACGD TSGR   PT    V  runs     Last      Avg      FWT      BWT Forgetting\n"
        "CE                        -    -    -    -     1    50.00    60.00    25.00   -12.50      12.50\n"
        "CE+ACGD                   x    -    -    -     1    56.25    66.25    25.00   -12.50      12.50\n"
        "CE+ACGD+TSGR              x    x    -    -     1    62.50    72.50    25.00   -12.50      12.50\n"
        "CE+ACGD+TSGR+PT           x    x    x    -     1    68.75    78.75    25.00   -12.50      12.50\n"
        "CE+ACGD+TSGR+PT+V         x    x    x    x     1    75.00    85.00    25.00   -12.50      12.50\n"
        "accuracies in percent; mean over runs per method\n";
    CHECK(out.str() == golden);
}

TEST_CASE("command-line exit codes")
{
    const fs::path dir = scratch("cli");
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("run --train.epochs many -o " + dir.string()) == 1);
    CHECK(run_cli("run --no-such-flag") == 1);
    CHECK(run_cli("run --model.input_dim 7 -o " + dir.string()) == 1);
    CHECK(run_cli("metrics " + (dir / "missing").string()) == 2);

    // Precedence: preset < file < flag.
    fs::create_directories(dir);
    {
        std::ofstream cfg(dir / "c.yaml");
        cfg << "stream:\n  num_tasks: 2\n  classes_per_task: 2\n  train_per_class: 10\n  test_per_class: 5\n"
               "  pretrain_classes: 4\n  pretrain_per_class: 4\npretrain:\n  steps: 2\ntrain:\n  epochs: 1\n"
               "  learning_rate: 0.5\n";
    }
    REQUIRE(run_cli("run -c " + (dir / "c.yaml").string() + " --train.learning_rate 0.01 -o "
                    + (dir / "out").string())
            == 0);
    const ExperimentConfig used = load_config_file(dir / "out" / "config.yaml");
    CHECK(used.train.learning_rate == 0.01);
    CHECK(used.stream.num_tasks == 2);
    CHECK(run_cli("metrics " + (dir / "out").string()) == 0);
}

TEST_CASE("bench preset")
{
    const ExperimentConfig c = bench_preset();
    CHECK_NOTHROW(c.validate());
    CHECK(c.stream.num_tasks == 5);
    CHECK(c.stream.classes_per_task == 4);
    CHECK(c.stream.train_per_class == 100);
    CHECK(c.stream.test_per_class == 50);
}

} // TEST_SUITE
