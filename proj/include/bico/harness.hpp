#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "bico/coreset.hpp"
#include "bico/dataset.hpp"
#include "bico/error.hpp"
#include "bico/inner.hpp"
#include "bico/kernels.hpp"
#include "bico/parallel.hpp"
#include "bico/streaming.hpp"

namespace bico {

struct Task {
    Dataset train;
    Dataset test;
};
using TaskSequence = std::vector<Task>;

enum class Selector { coreset, uniform, kcenter, kmeans, reservoir };

inline std::string_view to_string(Selector s) {
    switch (s) {
        case Selector::coreset: return "coreset";
        case Selector::uniform: return "uniform";
        case Selector::kcenter: return "kcenter";
        case Selector::kmeans: return "kmeans";
        case Selector::reservoir: return "reservoir";
    }
    return "?";
}

inline Selector selector_from_string(std::string_view s) {
    if (s == "coreset") { return Selector::coreset; }
    if (s == "uniform") { return Selector::uniform; }
    if (s == "kcenter") { return Selector::kcenter; }
    if (s == "kmeans") { return Selector::kmeans; }
    if (s == "reservoir") { return Selector::reservoir; }
    throw Error(ErrorCode::ConfigError, "unknown selector '" + std::string(s) + "'");
}

struct LearnerConfig {
    KernelSpec kernel = KernelSpec::rbf(0.1);
    double lambda = 1e-4;
    Loss loss = Loss::squared;
};

struct ReplayConfig {
    Index memory_size = 100;
    double beta = 1.0;
    Selector selector = Selector::coreset;
    LearnerConfig learner{};
    SelectionConfig selection{};  // proxy used by the coreset selector; size and seed are set per call
    std::uint64_t seed = 0;
    Index checkpoint_every = 0;  // streaming only: evaluate every k batches (0 = final batch only)

    void validate() const {
        if (memory_size < 1) { throw Error(ErrorCode::ConfigError, "replay: memory_size must be >= 1"); }
        if (!(beta >= 0.0)) { throw Error(ErrorCode::ConfigError, "replay: beta must be >= 0"); }
        if (!(learner.lambda > 0.0)) { throw Error(ErrorCode::ConfigError, "replay: learner lambda must be positive"); }
        learner.kernel.validate();
    }
};

/// Per-task test accuracy after each checkpoint. Row = task, column = checkpoint.
struct RunReport {
    Matrix per_task_accuracy;
    double average_accuracy = 0.0;
    std::vector<std::vector<Index>> selection_trace;
    double wall_time = 0.0;
    std::uint64_t seed = 0;
    std::string selector;
    double beta = 0.0;
};

/// Kernel model f(x) = alpha^T k(S, x) fitted on a weighted support set.
class KernelModel {
public:
    explicit KernelModel(LearnerConfig config) : config_(std::move(config)) {}

    void fit(const Dataset &points, const Vector &weights) {
        if (points.empty()) { throw Error(ErrorCode::InsufficientData, "learner: no training points"); }
        const Matrix k = gram(config_.kernel, points.features).matrix;
        InnerProblem p;
        p.gram_block = k;
        p.cross_block = k;
        p.labels = points.targets;
        p.support = iota_indices(points.size());
        p.weights = weights;
        p.lambda = config_.lambda;
        p.loss = config_.loss;
        alpha_ = solve_inner(p).alpha;
        support_ = points.features;
    }

    [[nodiscard]] Matrix decision(const Matrix &features) const {
        return cross_gram(config_.kernel, features, support_) * alpha_;
    }

    [[nodiscard]] std::vector<int> predict(const Matrix &features) const {
        const Matrix z = decision(features);
        std::vector<int> out(static_cast<size_t>(z.rows()));
        for (Index i = 0; i < z.rows(); ++i) {
            Index arg = 0;
            z.row(i).maxCoeff(&arg);
            out[static_cast<size_t>(i)] = static_cast<int>(arg);
        }
        return out;
    }

    [[nodiscard]] double accuracy(const Dataset &test) const {
        if (test.empty()) { return 0.0; }
        const std::vector<int> pred = predict(test.features);
        Index hit = 0;
        for (size_t i = 0; i < pred.size(); ++i) { hit += pred[i] == test.labels[i] ? 1 : 0; }
        return static_cast<double>(hit) / static_cast<double>(pred.size());
    }

private:
    LearnerConfig config_;
    Matrix support_;
    Matrix alpha_;
};

/// Training set assembled from weighted groups of points.
class WeightedSet {
public:
    void add(const Dataset &points, double weight_per_point) {
        if (points.empty() || weight_per_point <= 0.0) { return; }
        data_ = data_.concat(points);
        const Index old = weights_.size();
        weights_.conservativeResize(old + points.size());
        weights_.tail(points.size()).setConstant(weight_per_point);
    }
    [[nodiscard]] const Dataset &data() const { return data_; }
    [[nodiscard]] const Vector &weights() const { return weights_; }

private:
    Dataset data_;
    Vector weights_;
};

namespace detail {

inline double sq_dist(const Matrix &x, Index i, Index j) { return (x.row(i) - x.row(j)).squaredNorm(); }

inline std::vector<Index> kcenter(const Matrix &x, Index m, Index start) {
    const Index n = x.rows();
    std::vector<Index> out{start};
    Vector dist(n);
    for (Index i = 0; i < n; ++i) { dist[i] = sq_dist(x, i, start); }
    while (static_cast<Index>(out.size()) < m) {
        Index far = 0;
        dist.maxCoeff(&far);
        out.push_back(far);
        for (Index i = 0; i < n; ++i) { dist[i] = std::min(dist[i], sq_dist(x, i, far)); }
    }
    return out;
}

inline std::vector<Index> kmeans_nearest(const Matrix &x, Index m, Rng &rng, Index lloyd_iters = 50) {
    const Index n = x.rows();
    // k-means++ seeding
    Matrix centers(m, x.cols());
    std::uniform_int_distribution<Index> first(0, n - 1);
    centers.row(0) = x.row(first(rng));
    Vector d2(n);
    for (Index i = 0; i < n; ++i) { d2[i] = (x.row(i) - centers.row(0)).squaredNorm(); }
    for (Index c = 1; c < m; ++c) {
        Index pick = 0;
        const double total = d2.sum();
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double r = u(rng);
            for (pick = 0; pick < n - 1; ++pick) {
                r -= d2[pick];
                if (r <= 0.0) { break; }
            }
        } else {
            pick = first(rng);
        }
        centers.row(c) = x.row(pick);
        for (Index i = 0; i < n; ++i) { d2[i] = std::min(d2[i], (x.row(i) - centers.row(c)).squaredNorm()); }
    }
    // Lloyd iterations
    std::vector<Index> assign(static_cast<size_t>(n), -1);
    for (Index it = 0; it < lloyd_iters; ++it) {
        bool changed = false;
        for (Index i = 0; i < n; ++i) {
            Index best = 0;
            (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
            if (assign[static_cast<size_t>(i)] != best) {
                assign[static_cast<size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed) { break; }
        Matrix sum = Matrix::Zero(m, x.cols());
        Vector count = Vector::Zero(m);
        for (Index i = 0; i < n; ++i) {
            sum.row(assign[static_cast<size_t>(i)]) += x.row(i);
            count[assign[static_cast<size_t>(i)]] += 1.0;
        }
        for (Index c = 0; c < m; ++c) {
            if (count[c] > 0.0) { centers.row(c) = sum.row(c) / count[c]; }
        }
    }
    // nearest unused point per center
    std::vector<char> used(static_cast<size_t>(n), 0);
    std::vector<Index> out;
    for (Index c = 0; c < m; ++c) {
        const Vector dist = (x.rowwise() - centers.row(c)).rowwise().squaredNorm();
        Index best = -1;
        for (Index i = 0; i < n; ++i) {
            if (!used[static_cast<size_t>(i)] && (best < 0 || dist[i] < dist[best])) { best = i; }
        }
        used[static_cast<size_t>(best)] = 1;
        out.push_back(best);
    }
    return out;
}

}  // namespace detail

/// Baseline summaries: seeded uniform sample, farthest-first traversal from
/// `start` (random when negative), or the points nearest to k-means++/Lloyd
/// centers. Selection order is preserved so prefixes are valid shrinks.
inline Coreset baseline_select(const Dataset &data, Index m, Selector method, std::uint64_t seed, Index start = -1) {
    const Index n = data.size();
    if (m > n) { throw Error(ErrorCode::InsufficientData, "baseline_select: m > n"); }
    if (m < 0) { throw Error(ErrorCode::ConfigError, "baseline_select: m < 0"); }
    Coreset out;
    if (m == 0) { return out; }
    Rng rng(seed);
    if (m == n) {
        out.indices = iota_indices(n);
    } else if (method == Selector::uniform) {
        out.indices = sample_without_replacement(iota_indices(n), static_cast<size_t>(m), rng);
    } else if (method == Selector::kcenter) {
        if (start < 0) { start = std::uniform_int_distribution<Index>(0, n - 1)(rng); }
        if (start >= n) { throw Error(ErrorCode::IndexOutOfRange, "baseline_select: kcenter start"); }
        out.indices = detail::kcenter(data.features, m, start);
    } else if (method == Selector::kmeans) {
        out.indices = detail::kmeans_nearest(data.features, m, rng);
    } else {
        throw Error(ErrorCode::ConfigError, "baseline_select: unsupported method " + std::string(to_string(method)));
    }
    out.weights.assign(out.indices.size(), 1.0);
    return out;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Summary of `data` with `m` points using the configured selector.
inline Coreset select_summary(const Dataset &data, Index m, const ReplayConfig &config, std::uint64_t seed) {
    m = std::min(m, data.size());
    if (config.selector == Selector::coreset) {
        SelectionConfig sel = config.selection;
        sel.size = m;
        sel.seed = seed;
        return build_coreset(data, sel);
    }
    return baseline_select(data, m, config.selector, seed);
}

inline Reducer summary_reducer(const ReplayConfig &config) {
    return [config](const Dataset &data, Index size, std::uint64_t seed) { return select_summary(data, size, config, seed); };
}

namespace detail {

inline void finish_report(RunReport &report, std::chrono::steady_clock::time_point start) {
    const Index last = report.per_task_accuracy.cols() - 1;
    report.average_accuracy = last >= 0 ? report.per_task_accuracy.col(last).mean() : 0.0;
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Continual learning with replay. At task t the learner is fitted on the
/// current task (mean loss) plus beta times the mean loss of every stored
/// summary; afterwards X_t is summarized and all summaries are cut to the
/// first floor(m / t) points. The reservoir selector keeps one reservoir of m
/// points across all tasks instead.
inline RunReport run_continual(const TaskSequence &tasks, const ReplayConfig &config) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    Index total = 0;
    for (const auto &task : tasks) { total += task.train.size(); }
    if (tasks.empty()) { throw Error(ErrorCode::InsufficientData, "run_continual: no tasks"); }
    if (config.memory_size > total) { throw Error(ErrorCode::InsufficientData, "run_continual: m exceeds data"); }

    const Index num_tasks = static_cast<Index>(tasks.size());
    RunReport report;
    report.seed = config.seed;
    report.selector = std::string(to_string(config.selector));
    report.beta = config.beta;
    report.per_task_accuracy = Matrix::Zero(num_tasks, num_tasks);

    std::vector<Coreset> summaries;  // indices into tasks[tau].train
    Reservoir<std::pair<Index, Index>> reservoir(static_cast<size_t>(config.memory_size));
    Rng reservoir_rng(derive_seed(config.seed, 0xffff));

    for (Index t = 0; t < num_tasks; ++t) {
        const Dataset &current = tasks[static_cast<size_t>(t)].train;
        WeightedSet train;
        train.add(current, 1.0 / static_cast<double>(current.size()));
        if (config.selector == Selector::reservoir) {
            const auto &items = reservoir.items();
            if (!items.empty()) {
                Dataset mem;
                for (const auto &[task, row] : items) {
                    const std::vector<Index> one{row};
                    mem = mem.concat(tasks[static_cast<size_t>(task)].train.subset(one));
                }
                train.add(mem, config.beta / static_cast<double>(mem.size()));
            }
        } else {
            for (size_t tau = 0; tau < summaries.size(); ++tau) {
                if (summaries[tau].empty()) { continue; }
                const Dataset mem = tasks[tau].train.subset(summaries[tau].indices);
                train.add(mem, config.beta / static_cast<double>(mem.size()));
            }
        }
        KernelModel model(config.learner);
        model.fit(train.data(), train.weights());
        for (Index tau = 0; tau < num_tasks; ++tau) {
            report.per_task_accuracy(tau, t) = model.accuracy(tasks[static_cast<size_t>(tau)].test);
        }

        if (config.selector == Selector::reservoir) {
            for (Index i = 0; i < current.size(); ++i) { reservoir.offer({t, i}, reservoir_rng); }
            std::vector<Index> trace;
            for (const auto &[task, row] : reservoir.items()) {
                if (task == t) { trace.push_back(row); }
            }
            report.selection_trace.push_back(trace);
            continue;
        }
        const Index per_task = config.memory_size / (t + 1);
        summaries.push_back(select_summary(current, per_task, config, derive_seed(config.seed, static_cast<std::uint64_t>(t))));
        report.selection_trace.push_back(summaries.back().indices);
        for (auto &summary : summaries) {
            summary = shrink_prefix(summary, std::min(summary.size(), static_cast<size_t>(per_task)));
        }
    }
    detail::finish_report(report, start);
    return report;
}

/// Streaming with replay over batches of `stream`. Each batch is fitted
/// together with the memory (beta times the memory mean loss, slots weighted
/// by their regularizer mass) and then pushed into the memory: merge-reduce
/// with `slots` slots for the summary selectors, a reservoir for the
/// reservoir selector. The final selection_trace entry lists the stream rows
/// held in memory at the end.
inline RunReport run_streaming(const Dataset &pool, const StreamSpec &spec, const std::vector<Dataset> &tests,
                               const ReplayConfig &config, Index slots) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    Stream stream = make_stream(pool, spec);
    std::optional<MergeReduceBuffer> buffer;
    if (config.selector != Selector::reservoir) {
        buffer.emplace(config.memory_size, slots, summary_reducer(config), 1.0, config.seed);
    }
    Reservoir<Index> reservoir(static_cast<size_t>(config.memory_size));
    Rng reservoir_rng(derive_seed(config.seed, 0xffff));

    RunReport report;
    report.seed = config.seed;
    report.selector = std::string(to_string(config.selector));
    report.beta = config.beta;
    std::vector<Vector> columns;

    const Index num_batches = stream.num_batches();
    Index b = 0;
    while (auto batch = stream.next()) {
        ++b;
        WeightedSet train;
        train.add(batch->data, 1.0 / static_cast<double>(batch->data.size()));
        if (buffer) {
            double mass = 0.0;
            for (const auto &slot : buffer->slots()) { mass += slot.beta * static_cast<double>(slot.points.size()); }
            for (const auto &slot : buffer->slots()) {
                train.add(slot.points, config.beta * slot.beta / mass);
            }
        } else if (!reservoir.items().empty()) {
            const Dataset mem = pool.subset(reservoir.items());
            train.add(mem, config.beta / static_cast<double>(mem.size()));
        }
        const bool checkpoint = b == num_batches || (config.checkpoint_every > 0 && b % config.checkpoint_every == 0);
        if (checkpoint) {
            KernelModel model(config.learner);
            model.fit(train.data(), train.weights());
            Vector col(static_cast<Index>(tests.size()));
            for (size_t t = 0; t < tests.size(); ++t) { col[static_cast<Index>(t)] = model.accuracy(tests[t]); }
            columns.push_back(col);
        }
        if (buffer) {
            buffer->consume(batch->data, batch->source);
        } else {
            for (Index row : batch->source) { reservoir.offer(row, reservoir_rng); }
        }
    }

    report.per_task_accuracy = Matrix::Zero(static_cast<Index>(tests.size()), static_cast<Index>(columns.size()));
    for (size_t c = 0; c < columns.size(); ++c) { report.per_task_accuracy.col(static_cast<Index>(c)) = columns[c]; }
    std::vector<Index> memory;
    if (buffer) {
        for (const auto &slot : buffer->slots()) {
            memory.insert(memory.end(), slot.coreset.indices.begin(), slot.coreset.indices.end());
        }
    } else {
        memory = reservoir.items();
    }
    report.selection_trace.push_back(memory);
    detail::finish_report(report, start);
    return report;
}

struct BetaSweep {
    std::vector<double> betas;
    std::vector<RunReport> reports;
    size_t best = 0;  // argmax of average accuracy, first on ties
};

inline std::vector<double> default_beta_grid() { return {0.01, 0.1, 1.0, 10.0, 100.0, 1000.0}; }

/// Runs `run(beta)` for each beta (in parallel over `jobs` workers) and picks
/// the best average accuracy.
inline BetaSweep sweep_beta(const std::function<RunReport(double)> &run, const std::vector<double> &betas,
                            unsigned jobs = 1) {
    if (betas.empty()) { throw Error(ErrorCode::ConfigError, "sweep_beta: empty grid"); }
    BetaSweep out;
    out.betas = betas;
    out.reports.resize(betas.size());
    parallel_for(0, static_cast<std::ptrdiff_t>(betas.size()), jobs,
                 [&](std::ptrdiff_t i) { out.reports[static_cast<size_t>(i)] = run(betas[static_cast<size_t>(i)]); });
    for (size_t i = 1; i < betas.size(); ++i) {
        if (out.reports[i].average_accuracy > out.reports[out.best].average_accuracy) { out.best = i; }
    }
    return out;
}

/// Seeded synthetic split-task data: classes are mixtures of Gaussian blobs
/// and task t holds classes [t * classes_per_task, (t + 1) * classes_per_task).
struct SplitTaskSpec {
    Index num_tasks = 5;
    Index classes_per_task = 2;
    Index train_per_class = 250;
    Index test_per_class = 100;
    Index dim = 2;
    Index modes_per_class = 4;
    double class_spread = 4.0;  // scale of class centers
    double mode_spread = 1.5;   // scale of blob centers around the class center
    double noise = 0.35;        // within-blob standard deviation
    std::uint64_t seed = 0;
};

struct SplitData {
    TaskSequence tasks;
    Matrix mode_centers;  // (classes * modes) x dim
};

inline SplitData make_split_tasks(const SplitTaskSpec &spec) {
    if (spec.num_tasks < 1 || spec.classes_per_task < 1 || spec.dim < 1 || spec.modes_per_class < 1) {
        throw Error(ErrorCode::ConfigError, "split tasks: counts must be >= 1");
    }
    Rng rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> cube(-1.0, 1.0);
    const Index classes = spec.num_tasks * spec.classes_per_task;
    SplitData out;
    out.mode_centers.resize(classes * spec.modes_per_class, spec.dim);
    for (Index c = 0; c < classes; ++c) {
        Vector center(spec.dim);
        for (Index j = 0; j < spec.dim; ++j) { center[j] = spec.class_spread * cube(rng); }
        for (Index k = 0; k < spec.modes_per_class; ++k) {
            for (Index j = 0; j < spec.dim; ++j) {
                out.mode_centers(c * spec.modes_per_class + k, j) = center[j] + spec.mode_spread * normal(rng);
            }
        }
    }
    auto sample = [&](Index per_class, Index first_class) {
        Matrix x(per_class * spec.classes_per_task, spec.dim);
        std::vector<int> labels;
        std::uniform_int_distribution<Index> mode(0, spec.modes_per_class - 1);
        Index r = 0;
        for (Index c = first_class; c < first_class + spec.classes_per_task; ++c) {
            for (Index i = 0; i < per_class; ++i, ++r) {
                const Index k = mode(rng);
                for (Index j = 0; j < spec.dim; ++j) {
                    x(r, j) = out.mode_centers(c * spec.modes_per_class + k, j) + spec.noise * normal(rng);
                }
                labels.push_back(static_cast<int>(c));
            }
        }
        return Dataset::classification(std::move(x), std::move(labels), static_cast<int>(classes));
    };
    for (Index t = 0; t < spec.num_tasks; ++t) {
        Task task;
        task.train = sample(spec.train_per_class, t * spec.classes_per_task);
        task.test = sample(spec.test_per_class, t * spec.classes_per_task);
        out.tasks.push_back(std::move(task));
    }
    return out;
}

/// Concatenated training pool of all tasks (rows in task order).
inline Dataset concat_train(const TaskSequence &tasks) {
    Dataset out;
    for (const auto &task : tasks) { out = out.concat(task.train); }
    return out;
}

inline std::vector<Dataset> test_sets(const TaskSequence &tasks) {
    std::vector<Dataset> out;
    for (const auto &task : tasks) { out.push_back(task.test); }
    return out;
}

}  // namespace bico
