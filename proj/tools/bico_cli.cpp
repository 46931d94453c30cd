#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bico/checks.hpp"
#include "bico/coreset.hpp"
#include "bico/expdesign.hpp"
#include "bico/harness.hpp"
#include "bico/io.hpp"
#include "bico/parallel.hpp"
#include "bico/streaming.hpp"

using namespace bico;

namespace {

// JSON config files: a flat object whose keys are long option names of the
// chosen subcommand. Arrays become repeated inputs.
class JsonConfig : public CLI::Config {
public:
    explicit JsonConfig(std::string section) : section_(std::move(section)) {}

    std::string to_config(const CLI::App *, bool, bool, std::string) const override { return "{}\n"; }

    std::vector<CLI::ConfigItem> from_config(std::istream &input) const override {
        Json j;
        try {
            input >> j;
        } catch (const Json::exception &e) {
            throw CLI::ConversionError("config file is not valid JSON: " + std::string(e.what()));
        }
        if (!j.is_object()) { throw CLI::ConversionError("config file must hold a JSON object"); }
        std::vector<CLI::ConfigItem> out;
        for (const auto &[key, value] : j.items()) {
            CLI::ConfigItem item;
            item.name = key;
            if (!section_.empty()) { item.parents = {section_}; }
            auto scalar = [](const Json &v) {
                if (v.is_boolean()) { return std::string(v.get<bool>() ? "true" : "false"); }
                if (v.is_string()) { return v.get<std::string>(); }
                return v.dump();
            };
            if (value.is_array()) {
                for (const auto &v : value) { item.inputs.push_back(scalar(v)); }
            } else {
                item.inputs.push_back(scalar(value));
            }
            out.push_back(std::move(item));
        }
        return out;
    }

private:
    std::string section_;
};

struct DataOptions {
    std::string data, labels, format;
    std::string test_data, test_labels;
};

struct SelectionOptions {
    std::string kernel = "rbf";
    double gamma = 5e-4;
    int depth = 1;
    double bias_variance = 0.0;
    bool raw_ntk = false;
    double lambda = 1e-3;
    Index pool = 200;
    Index cg_iters = 50;
    std::string loss = "squared";
    bool weighted = false;
    Index outer_iters = 10;
    double outer_step = 0.05;
    std::string outer_optimizer = "adam";
};

struct SyntheticOptions {
    Index tasks = 5;
    Index classes_per_task = 2;
    Index dim = 5;
    Index train_per_class = 250;
    Index test_per_class = 100;
    std::uint64_t data_seed = 0;
};

struct Common {
    std::uint64_t seed = 0;
    std::string out;
    unsigned jobs = 0;
    bool timing = false;
};

void add_data_options(CLI::App *sub, DataOptions &d, bool labels_required) {
    auto *data = sub->add_option("--data", d.data, "feature file (csv or f32bin)");
    auto *labels = sub->add_option("--labels", d.labels, "label file (csv ints, or u32 sequence next to f32bin)");
    if (labels_required) { labels->needs(data); }
    sub->add_option("--format", d.format, "csv | f32bin (default: from the file extension)")
        ->check(CLI::IsMember({"csv", "f32bin"}));
}

void add_selection_options(CLI::App *sub, SelectionOptions &s) {
    sub->add_option("--kernel", s.kernel, "linear | rbf | fc-ntk")
        ->check(CLI::IsMember({"linear", "rbf", "fc-ntk", "fc_ntk"}))
        ->capture_default_str();
    sub->add_option("--gamma", s.gamma, "rbf bandwidth")->capture_default_str();
    sub->add_option("--depth", s.depth, "fc-ntk hidden layers")->capture_default_str();
    sub->add_option("--bias-variance", s.bias_variance, "fc-ntk bias variance")->capture_default_str();
    sub->add_flag("--raw-ntk", s.raw_ntk, "fc-ntk on unnormalized inputs");
    sub->add_option("--lambda", s.lambda, "proxy ridge regularizer")->capture_default_str();
    sub->add_option("--pool", s.pool, "candidate pool size per greedy step")->capture_default_str();
    sub->add_option("--cg-iters", s.cg_iters, "conjugate gradient iterations")->capture_default_str();
    sub->add_option("--loss", s.loss, "squared | cross_entropy")
        ->check(CLI::IsMember({"squared", "cross_entropy"}))
        ->capture_default_str();
    sub->add_flag("--weighted,!--binary", s.weighted, "reoptimize weights (default: binary)");
    sub->add_option("--outer-iters", s.outer_iters, "weight reoptimization iterations")->capture_default_str();
    sub->add_option("--outer-step", s.outer_step, "weight reoptimization step")->capture_default_str();
    sub->add_option("--outer-optimizer", s.outer_optimizer, "adam | gd")
        ->check(CLI::IsMember({"adam", "gd"}))
        ->capture_default_str();
}

void add_synthetic_options(CLI::App *sub, SyntheticOptions &s) {
    sub->add_option("--tasks", s.tasks, "synthetic: number of tasks")->capture_default_str();
    sub->add_option("--classes-per-task", s.classes_per_task, "classes per task")->capture_default_str();
    sub->add_option("--dim", s.dim, "synthetic: feature dimension")->capture_default_str();
    sub->add_option("--train-per-class", s.train_per_class, "synthetic: training points per class")->capture_default_str();
    sub->add_option("--test-per-class", s.test_per_class, "synthetic: test points per class")->capture_default_str();
    sub->add_option("--data-seed", s.data_seed, "synthetic: generator seed")->capture_default_str();
}

void add_common_options(CLI::App *sub, Common &c) {
    sub->add_option("--seed", c.seed, "random seed (BC_SEED overrides)")->capture_default_str();
    sub->add_option("--out", c.out, "output file (default: stdout)");
    sub->add_flag("--timing", c.timing, "include wall-clock time in the report");
}

KernelSpec kernel_of(const SelectionOptions &s) {
    KernelSpec k;
    k.family = kernel_family_from_string(s.kernel);
    k.gamma = s.gamma;
    k.depth = s.depth;
    k.bias_variance = s.bias_variance;
    k.normalize = !s.raw_ntk;
    k.validate();
    return k;
}

SelectionConfig selection_of(const SelectionOptions &s, Index size, std::uint64_t seed) {
    SelectionConfig c;
    c.size = size;
    c.weighted = s.weighted;
    c.candidate_pool = s.pool;
    c.cg_iters = s.cg_iters;
    c.outer_step = s.outer_step;
    c.outer_iters = s.outer_iters;
    c.outer_optimizer = s.outer_optimizer == "gd" ? OuterOptimizer::gd : OuterOptimizer::adam;
    c.lambda = s.lambda;
    c.kernel = kernel_of(s);
    c.loss = loss_from_string(s.loss);
    c.seed = seed;
    c.validate();
    return c;
}

DataFormat format_of(const DataOptions &d, const std::string &path) {
    return d.format.empty() ? data_format_from_path(path) : data_format_from_string(d.format);
}

LoadedDataset load(const DataOptions &d) {
    if (d.data.empty()) { throw Error(ErrorCode::ConfigError, "--data is required"); }
    if (d.labels.empty()) { throw Error(ErrorCode::ConfigError, "--labels is required"); }
    return load_dataset(d.data, d.labels, format_of(d, d.data));
}

void emit(const std::string &path, const std::string &text) {
    if (path.empty()) {
        std::cout << text;
    } else {
        detail::write_file(path, text);
    }
}

/// Report envelope shared by every command.
Json envelope(const std::string &command, const Json &config, std::uint64_t seed) {
    return Json{{"command", command}, {"config_digest", config_digest(config)}, {"seed", seed}, {"config", config}};
}

// ---- task construction ----

struct TaskData {
    TaskSequence tasks;
    Json source;
};

/// Groups classes [t * k, (t + 1) * k) into task t. Without a test file every
/// fifth point of each class (in file order) is held out.
TaskSequence tasks_from(const Dataset &train_all, const std::optional<Dataset> &test_all, Index classes_per_task) {
    if (classes_per_task < 1) { throw Error(ErrorCode::ConfigError, "--classes-per-task must be >= 1"); }
    const int classes = train_all.num_classes;
    const Index num_tasks = (classes + classes_per_task - 1) / classes_per_task;
    std::vector<std::vector<Index>> train_rows(static_cast<size_t>(num_tasks)), test_rows(static_cast<size_t>(num_tasks));
    std::map<int, Index> seen;
    for (Index i = 0; i < train_all.size(); ++i) {
        const int c = train_all.labels[static_cast<size_t>(i)];
        const auto t = static_cast<size_t>(c / classes_per_task);
        if (!test_all && seen[c]++ % 5 == 4) {
            test_rows[t].push_back(i);
        } else {
            train_rows[t].push_back(i);
        }
    }
    TaskSequence tasks;
    for (Index t = 0; t < num_tasks; ++t) {
        Task task;
        task.train = train_all.subset(train_rows[static_cast<size_t>(t)]);
        if (test_all) {
            std::vector<Index> rows;
            for (Index i = 0; i < test_all->size(); ++i) {
                if (test_all->labels[static_cast<size_t>(i)] / classes_per_task == t) { rows.push_back(i); }
            }
            task.test = test_all->subset(rows);
        } else {
            task.test = train_all.subset(test_rows[static_cast<size_t>(t)]);
        }
        if (task.train.size() == 0 || task.test.size() == 0) {
            throw Error(ErrorCode::EmptyDataset, "task " + std::to_string(t) + " has no training or test points");
        }
        tasks.push_back(std::move(task));
    }
    return tasks;
}

TaskData make_tasks(const DataOptions &d, const SyntheticOptions &s) {
    TaskData out;
    if (d.data.empty()) {
        SplitTaskSpec spec;
        spec.num_tasks = s.tasks;
        spec.classes_per_task = s.classes_per_task;
        spec.dim = s.dim;
        spec.train_per_class = s.train_per_class;
        spec.test_per_class = s.test_per_class;
        spec.seed = s.data_seed;
        out.tasks = make_split_tasks(spec).tasks;
        out.source = Json{{"synthetic", true},
                          {"tasks", s.tasks},
                          {"classes_per_task", s.classes_per_task},
                          {"dim", s.dim},
                          {"train_per_class", s.train_per_class},
                          {"test_per_class", s.test_per_class},
                          {"data_seed", s.data_seed}};
        return out;
    }
    const LoadedDataset train = load(d);
    std::optional<Dataset> test;
    if (!d.test_data.empty()) {
        if (d.test_labels.empty()) { throw Error(ErrorCode::ConfigError, "--test-data needs --test-labels"); }
        LoadedDataset t = load_dataset(d.test_data, d.test_labels, format_of(d, d.test_data));
        // map test labels through the training id table
        std::map<std::int64_t, int> id;
        for (size_t i = 0; i < train.class_ids.size(); ++i) { id[train.class_ids[i]] = static_cast<int>(i); }
        std::vector<int> labels;
        for (int l : t.data.labels) {
            const auto it = id.find(t.class_ids[static_cast<size_t>(l)]);
            if (it == id.end()) { throw Error(ErrorCode::ShapeMismatch, "test labels contain a class absent from training"); }
            labels.push_back(it->second);
        }
        if (t.data.dim() != train.data.dim()) { throw Error(ErrorCode::ShapeMismatch, "test features differ in dimension"); }
        test = Dataset::classification(t.data.features, labels, train.data.num_classes);
    }
    out.tasks = tasks_from(train.data, test, s.classes_per_task);
    out.source = Json{{"synthetic", false},
                      {"data", d.data},
                      {"labels", d.labels},
                      {"test_data", d.test_data},
                      {"test_labels", d.test_labels},
                      {"classes_per_task", s.classes_per_task}};
    return out;
}

/// Segment t holds `per_class[t]` points of every class of task t; without
/// explicit counts it holds all of them.
StreamSpec stream_spec_of(const TaskSequence &tasks, const Dataset &pool, const std::vector<Index> &per_class,
                          Index batch_size, std::uint64_t seed) {
    if (!per_class.empty() && per_class.size() > tasks.size()) {
        throw Error(ErrorCode::ConfigError, "--segments lists more segments than there are tasks");
    }
    std::map<int, Index> available;
    for (int l : pool.labels) { ++available[l]; }
    StreamSpec spec;
    spec.batch_size = batch_size;
    spec.seed = seed;
    const size_t segments = per_class.empty() ? tasks.size() : per_class.size();
    for (size_t t = 0; t < segments; ++t) {
        StreamSegment seg;
        std::map<int, Index> counts;
        for (int l : tasks[t].train.labels) { counts[l] = 0; }
        for (const auto &[cls, unused] : counts) {
            seg.class_counts[cls] = per_class.empty() ? available[cls] : per_class[t];
        }
        spec.composition.push_back(seg);
    }
    return spec;
}

// ---- summarize ----

struct SummarizeOptions {
    DataOptions data;
    SelectionOptions sel;
    Common common;
    Index size = 10;
};

int cmd_summarize(const SummarizeOptions &o) {
    const LoadedDataset loaded = load(o.data);
    const SelectionConfig cfg = selection_of(o.sel, o.size, o.common.seed);
    Json config{{"data", o.data.data}, {"labels", o.data.labels}, {"selection", to_json(cfg)}};
    const auto start = std::chrono::steady_clock::now();
    const Coreset c = build_coreset(loaded.data, cfg);
    Json report = envelope("summarize", config, cfg.seed);
    report["n"] = loaded.data.size();
    report["d"] = loaded.data.dim();
    report["coreset"] = to_json(c);
    std::vector<std::int64_t> labels;
    for (Index i : c.indices) { labels.push_back(loaded.class_ids[static_cast<size_t>(loaded.data.labels[static_cast<size_t>(i)])]); }
    report["coreset"]["labels"] = labels;
    report["outer_value"] = c.empty() ? Json(nullptr) : Json(coreset_outer_value(loaded.data, c, cfg));
    if (o.common.timing) {
        report["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    emit(o.common.out, report.dump(2) + "\n");
    return 0;
}

// ---- stream ----

struct StreamOptions {
    DataOptions data;
    SyntheticOptions synth;
    SelectionOptions sel;
    Common common;
    Index memory = 100;
    Index slots = 5;
    Index batch_size = 125;
    double beta_unit = 1.0;
    std::vector<Index> segments;
    std::string selector = "coreset";
    std::string checkpoint;
    std::string resume;
    Index stop_after = 0;
};

int cmd_stream(const StreamOptions &o) {
    ReplayConfig rc;
    rc.memory_size = o.memory;
    rc.selector = selector_from_string(o.selector);
    if (rc.selector == Selector::reservoir) {
        throw Error(ErrorCode::ConfigError, "stream: reservoir memory has no merge-reduce buffer; use eval --mode streaming");
    }
    rc.selection = selection_of(o.sel, 0, o.common.seed);
    rc.seed = o.common.seed;
    rc.validate();
    if (o.slots < 1 || o.memory % o.slots != 0) {
        throw Error(ErrorCode::ConfigError, "slot count " + std::to_string(o.slots) + " does not divide memory size " +
                                                std::to_string(o.memory));
    }
    const TaskData td = make_tasks(o.data, o.synth);
    const Dataset pool = concat_train(td.tasks);
    const StreamSpec spec = stream_spec_of(td.tasks, pool, o.segments, o.batch_size, o.common.seed);

    Json config{{"source", td.source},
                {"stream", to_json(spec)},
                {"memory_size", o.memory},
                {"slots", o.slots},
                {"beta_unit", o.beta_unit},
                {"selector", o.selector},
                {"selection", to_json(rc.selection)}};
    const std::string digest = config_digest(config);

    const auto start = std::chrono::steady_clock::now();
    Stream stream = make_stream(pool, spec);
    MergeReduceBuffer buffer(o.memory, o.slots, summary_reducer(rc), o.beta_unit, o.common.seed);
    if (!o.resume.empty()) {
        Json ck;
        try {
            ck = Json::parse(detail::read_file(o.resume));
        } catch (const Json::exception &e) {
            throw Error(ErrorCode::ParseError, o.resume + ": " + e.what());
        }
        if (ck.value("config_digest", std::string()) != digest) {
            throw Error(ErrorCode::ConfigError, "checkpoint " + o.resume + " was written under a different configuration");
        }
        buffer_from_json(buffer, ck.at("buffer"), pool);
        for (Index b = 0; b < buffer.batches_consumed(); ++b) {
            if (!stream.next()) { throw Error(ErrorCode::ConfigError, "checkpoint is past the end of the stream"); }
        }
    }
    while (o.stop_after <= 0 || buffer.batches_consumed() < o.stop_after) {
        auto batch = stream.next();
        if (!batch) { break; }
        buffer.consume(batch->data, batch->source);
    }
    const bool finished = buffer.batches_consumed() >= stream.num_batches();

    if (!o.checkpoint.empty()) {
        Json ck{{"config_digest", digest}, {"seed", o.common.seed}, {"buffer", buffer_to_json(buffer)}};
        detail::write_file(o.checkpoint, ck.dump(2) + "\n");
    }

    Json report = envelope("stream", config, o.common.seed);
    report["finished"] = finished;
    report["total_batches"] = stream.num_batches();
    report["buffer"] = buffer_to_json(buffer);
    std::map<Index, Index> segment_hits;
    for (const auto &slot : buffer.slots()) {
        for (Index row : slot.coreset.indices) {
            const int c = pool.labels[static_cast<size_t>(row)];
            for (size_t t = 0; t < spec.composition.size(); ++t) {
                if (spec.composition[t].class_counts.count(c)) { ++segment_hits[static_cast<Index>(t)]; }
            }
        }
    }
    Json coverage = Json::array();
    for (size_t t = 0; t < spec.composition.size(); ++t) { coverage.push_back(segment_hits[static_cast<Index>(t)]); }
    report["points_per_segment"] = coverage;
    if (o.common.timing) {
        report["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    emit(o.common.out, report.dump(2) + "\n");
    return 0;
}

// ---- expdesign ----

struct ExpDesignOptions {
    DataOptions data;
    Common common;
    Index n = 10;
    Index d = 3;
    double sigma2 = 1.0;
    double lambda = 1.0;
    Index size = 3;
    bool brute_force = false;
    Index probe_trials = 500;
};

int cmd_expdesign(const ExpDesignOptions &o) {
    DesignInstance inst;
    Json source;
    if (!o.data.data.empty()) {
        inst.x = load_features(o.data.data, format_of(o.data, o.data.data));
        source = Json{{"data", o.data.data}};
    } else {
        if (o.n < 1 || o.d < 1) { throw Error(ErrorCode::ConfigError, "--n and --d must be >= 1"); }
        Rng rng(o.common.seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        inst.x.resize(o.n, o.d);
        for (Index i = 0; i < o.n; ++i) {
            for (Index j = 0; j < o.d; ++j) { inst.x(i, j) = normal(rng); }
        }
        source = Json{{"n", o.n}, {"d", o.d}};
    }
    inst.sigma2 = o.sigma2;
    inst.lambda = o.lambda;
    inst.validate();
    if (o.size < 0 || o.size > inst.n()) {
        throw Error(ErrorCode::InsufficientData, "design size " + std::to_string(o.size) + " with n = " + std::to_string(inst.n()));
    }
    Json config{{"source", source}, {"sigma2", o.sigma2}, {"lambda", o.lambda}, {"size", o.size}, {"brute_force", o.brute_force}};

    const std::vector<Index> chosen = greedy_design(inst, o.size);
    const double greedy = design_reward(inst, chosen);
    const double gamma = weak_submodularity_gamma(inst);
    Json report = envelope("expdesign", config, o.common.seed);
    report["n"] = inst.n();
    report["d"] = inst.d();
    report["greedy"] = Json{{"indices", chosen},
                            {"reward", greedy},
                            {"objective", obj_bayes_v(inst, indicator(inst.n(), chosen))}};
    report["baseline_objective"] = obj_bayes_v(inst, Vector::Zero(inst.n()));
    report["gamma"] = gamma;
    report["guarantee_factor"] = 1.0 - std::exp(-gamma);
    report["smoothness_bound"] = bayes_v_smoothness_bound(inst);
    if (inst.n() <= 12) { report["probe_ratio"] = submodularity_ratio_probe(inst, o.probe_trials, o.common.seed); }
    if (o.brute_force) {
        double subsets = 1.0;
        for (Index i = 0; i < o.size; ++i) { subsets *= static_cast<double>(inst.n() - i) / static_cast<double>(i + 1); }
        if (subsets > 2e6) { throw Error(ErrorCode::TooLarge, "brute force over " + checks::fmt(subsets) + " subsets"); }
        const double opt = checks::brute_force_best(inst, o.size);
        report["opt"] = opt;
        report["guarantee_holds"] = greedy >= (1.0 - std::exp(-gamma)) * opt - 1e-12;
    }
    emit(o.common.out, report.dump(2) + "\n");
    return 0;
}

// ---- eval ----

struct EvalOptions {
    DataOptions data;
    SyntheticOptions synth;
    SelectionOptions sel;
    Common common;
    std::string mode = "continual";
    std::string selector = "coreset";
    Index memory = 100;
    double beta = 1.0;
    bool beta_sweep = false;
    std::vector<double> betas;
    Index slots = 5;
    Index batch_size = 125;
    std::vector<Index> segments;
    Index checkpoint_every = 0;
    std::string learner_kernel = "rbf";
    double learner_gamma = 0.1;
    double learner_lambda = 1e-4;
    std::string learner_loss = "squared";
    std::string curves;
};

int cmd_eval(EvalOptions o) {
    ReplayConfig rc;
    rc.memory_size = o.memory;
    rc.beta = o.beta;
    rc.selector = selector_from_string(o.selector);
    rc.learner.kernel.family = kernel_family_from_string(o.learner_kernel);
    rc.learner.kernel.gamma = o.learner_gamma;
    rc.learner.lambda = o.learner_lambda;
    rc.learner.loss = loss_from_string(o.learner_loss);
    rc.selection = selection_of(o.sel, 0, o.common.seed);
    rc.seed = o.common.seed;
    rc.checkpoint_every = o.checkpoint_every;
    rc.validate();
    if (o.mode != "continual" && o.mode != "streaming") {
        throw Error(ErrorCode::ConfigError, "--mode must be continual or streaming");
    }
    const bool streaming = o.mode == "streaming";
    if (streaming && rc.selector != Selector::reservoir && (o.slots < 1 || o.memory % o.slots != 0)) {
        throw Error(ErrorCode::ConfigError, "slot count " + std::to_string(o.slots) + " does not divide memory size " +
                                                std::to_string(o.memory));
    }
    const TaskData td = make_tasks(o.data, o.synth);
    const Dataset pool = streaming ? concat_train(td.tasks) : Dataset{};
    const std::vector<Dataset> tests = test_sets(td.tasks);
    StreamSpec spec;
    if (streaming) { spec = stream_spec_of(td.tasks, pool, o.segments, o.batch_size, o.common.seed); }

    std::vector<double> betas = o.betas.empty() ? default_beta_grid() : o.betas;
    if (!o.beta_sweep) { betas = {o.beta}; }
    Json config{{"mode", o.mode}, {"source", td.source}, {"replay", to_json(rc)}, {"beta_sweep", o.beta_sweep}};
    if (o.beta_sweep) { config["betas"] = betas; }
    if (streaming) {
        config["stream"] = to_json(spec);
        config["slots"] = o.slots;
    }

    auto run = [&](double beta) {
        ReplayConfig c = rc;
        c.beta = beta;
        return streaming ? run_streaming(pool, spec, tests, c, o.slots) : run_continual(td.tasks, c);
    };
    const BetaSweep sweep = sweep_beta(run, betas, o.common.jobs);
    const RunReport &best = sweep.reports[sweep.best];

    Json report = envelope("eval", config, o.common.seed);
    if (o.beta_sweep) {
        Json entries = Json::array();
        for (size_t i = 0; i < sweep.betas.size(); ++i) {
            entries.push_back(Json{{"beta", sweep.betas[i]}, {"average_accuracy", sweep.reports[i].average_accuracy}});
        }
        report["sweep"] = entries;
        report["best_beta"] = sweep.betas[sweep.best];
    }
    report["report"] = to_json(best, o.common.timing);
    if (!o.curves.empty()) { detail::write_file(o.curves, run_report_csv(best)); }
    emit(o.common.out, report.dump(2) + "\n");
    return 0;
}

// ---- check ----

struct CheckOptions {
    DataOptions data;
    Common common;
};

int cmd_check(const CheckOptions &o) {
    Dataset data;
    Json source;
    if (!o.data.data.empty()) {
        data = load(o.data).data;
        source = Json{{"data", o.data.data}, {"labels", o.data.labels}};
    } else {
        Rng rng(o.common.seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        Matrix x(12, 3);
        std::vector<int> labels;
        for (Index i = 0; i < 12; ++i) {
            for (Index j = 0; j < 3; ++j) { x(i, j) = normal(rng) + 2.0 * static_cast<double>(i % 2); }
            labels.push_back(static_cast<int>(i % 2));
        }
        data = Dataset::classification(x, labels, 2);
        source = Json{{"synthetic", true}};
    }
    const auto results = run_checks(data, o.common.seed);
    size_t width = 0;
    for (const auto &r : results) { width = std::max(width, r.name.size()); }
    bool all = true;
    Json rows = Json::array();
    for (const auto &r : results) {
        all = all && r.passed;
        std::cout << (r.passed ? "PASS  " : "FAIL  ") << r.name << std::string(width - r.name.size() + 2, ' ') << r.detail
                  << "\n";
        rows.push_back(Json{{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
    }
    std::cout << (all ? "all checks passed" : "some checks failed") << "\n";
    if (!o.common.out.empty()) {
        Json report = envelope("check", Json{{"source", source}}, o.common.seed);
        report["checks"] = rows;
        report["all_passed"] = all;
        detail::write_file(o.common.out, report.dump(2) + "\n");
    }
    return all ? 0 : 1;
}

std::string find_subcommand(int argc, char **argv, const std::vector<std::string> &names) {
    for (int i = 1; i < argc; ++i) {
        for (const auto &n : names) {
            if (n == argv[i]) { return n; }
        }
    }
    return "";
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Bilevel coreset construction, streaming summaries and experimental design"};
    app.require_subcommand(1);
    unsigned jobs = 0;
    app.add_option("--jobs", jobs, "worker threads (default: available cores)");

    SummarizeOptions so;
    auto *summarize = app.add_subcommand("summarize", "select a coreset from a labelled dataset");
    add_data_options(summarize, so.data, true);
    add_selection_options(summarize, so.sel);
    add_common_options(summarize, so.common);
    summarize->add_option("--size", so.size, "coreset size")->capture_default_str();

    StreamOptions st;
    auto *stream = app.add_subcommand("stream", "run the merge-reduce memory over a class-segmented stream");
    st.sel.gamma = 0.01;
    st.sel.lambda = 0.01;
    add_data_options(stream, st.data, true);
    add_synthetic_options(stream, st.synth);
    add_selection_options(stream, st.sel);
    add_common_options(stream, st.common);
    stream->add_option("--memory", st.memory, "memory size m")->capture_default_str();
    stream->add_option("--slots", st.slots, "buffer slots s (must divide m)")->capture_default_str();
    stream->add_option("--batch-size", st.batch_size, "stream batch size")->capture_default_str();
    stream->add_option("--beta-unit", st.beta_unit, "regularizer mass per batch")->capture_default_str();
    stream->add_option("--segments", st.segments, "points per class for each task segment");
    stream->add_option("--selector", st.selector, "coreset | uniform | kcenter | kmeans")->capture_default_str();
    stream->add_option("--checkpoint", st.checkpoint, "write the buffer state here after the run");
    stream->add_option("--resume", st.resume, "continue from a checkpoint written with the same configuration");
    stream->add_option("--stop-after", st.stop_after, "stop once this many batches have been consumed");
    stream->add_option("--test-data", st.data.test_data, "held-out features");
    stream->add_option("--test-labels", st.data.test_labels, "held-out labels");

    ExpDesignOptions ed;
    auto *expdesign = app.add_subcommand("expdesign", "greedy Bayesian V-optimal design");
    add_data_options(expdesign, ed.data, false);
    add_common_options(expdesign, ed.common);
    expdesign->add_option("--n", ed.n, "random instance: rows")->capture_default_str();
    expdesign->add_option("--d", ed.d, "random instance: columns")->capture_default_str();
    expdesign->add_option("--sigma2", ed.sigma2, "noise variance")->capture_default_str();
    expdesign->add_option("--lambda", ed.lambda, "prior precision")->capture_default_str();
    expdesign->add_option("--size", ed.size, "design size m")->capture_default_str();
    expdesign->add_flag("--brute-force", ed.brute_force, "enumerate all size-m subsets for OPT");
    expdesign->add_option("--probe-trials", ed.probe_trials, "submodularity probe samples (n <= 12)")->capture_default_str();

    EvalOptions ev;
    auto *eval = app.add_subcommand("eval", "continual or streaming evaluation with replay");
    ev.sel.gamma = 0.01;
    ev.sel.lambda = 0.01;
    add_data_options(eval, ev.data, true);
    add_synthetic_options(eval, ev.synth);
    add_selection_options(eval, ev.sel);
    add_common_options(eval, ev.common);
    eval->add_option("--test-data", ev.data.test_data, "held-out features");
    eval->add_option("--test-labels", ev.data.test_labels, "held-out labels");
    eval->add_option("--mode", ev.mode, "continual | streaming")
        ->check(CLI::IsMember({"continual", "streaming"}))
        ->capture_default_str();
    eval->add_option("--selector", ev.selector, "coreset | uniform | kcenter | kmeans | reservoir")->capture_default_str();
    eval->add_option("--memory", ev.memory, "memory size m")->capture_default_str();
    eval->add_option("--beta", ev.beta, "replay regularizer")->capture_default_str();
    eval->add_flag("--beta-sweep", ev.beta_sweep, "sweep beta and report the best");
    eval->add_option("--betas", ev.betas, "beta grid for --beta-sweep (default 0.01 .. 1000)");
    eval->add_option("--slots", ev.slots, "streaming: buffer slots")->capture_default_str();
    eval->add_option("--batch-size", ev.batch_size, "streaming: batch size")->capture_default_str();
    eval->add_option("--segments", ev.segments, "streaming: points per class for each task segment");
    eval->add_option("--checkpoint-every", ev.checkpoint_every, "streaming: evaluate every k batches")->capture_default_str();
    eval->add_option("--learner-kernel", ev.learner_kernel, "evaluation model kernel")
        ->check(CLI::IsMember({"linear", "rbf", "fc-ntk", "fc_ntk"}))
        ->capture_default_str();
    eval->add_option("--learner-gamma", ev.learner_gamma, "evaluation model rbf bandwidth")->capture_default_str();
    eval->add_option("--learner-lambda", ev.learner_lambda, "evaluation model ridge")->capture_default_str();
    eval->add_option("--learner-loss", ev.learner_loss, "squared | cross_entropy")
        ->check(CLI::IsMember({"squared", "cross_entropy"}))
        ->capture_default_str();
    eval->add_option("--curves", ev.curves, "write checkpoint,task,accuracy CSV here");

    CheckOptions ck;
    auto *check = app.add_subcommand("check", "run the property suite and print a pass/fail table");
    add_data_options(check, ck.data, true);
    add_common_options(check, ck.common);

    for (auto *sub : {summarize, stream, expdesign, eval, check}) { sub->fallthrough(); }
    app.config_formatter(std::make_shared<JsonConfig>(find_subcommand(argc, argv, {"summarize", "stream", "expdesign", "eval", "check"})));
    app.set_config("--config", "", "JSON file of option values (flags override it)");
    app.allow_config_extras(false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (jobs > 0) { default_jobs() = jobs; }
        std::optional<std::uint64_t> env_seed;
        if (const char *s = std::getenv("BC_SEED"); s != nullptr && *s != '\0') {
            std::uint64_t v = 0;
            if (!detail::parse_number(std::string_view(s), v)) {
                throw Error(ErrorCode::ConfigError, "BC_SEED='" + std::string(s) + "' is not an unsigned integer");
            }
            env_seed = v;
        }
        for (Common *c : {&so.common, &st.common, &ed.common, &ev.common, &ck.common}) {
            if (env_seed) { c->seed = *env_seed; }
            c->jobs = jobs;
        }
        if (summarize->parsed()) { return cmd_summarize(so); }
        if (stream->parsed()) { return cmd_stream(st); }
        if (expdesign->parsed()) { return cmd_expdesign(ed); }
        if (eval->parsed()) { return cmd_eval(ev); }
        if (check->parsed()) { return cmd_check(ck); }
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return is_config_error(e.code()) ? 2 : 3;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
