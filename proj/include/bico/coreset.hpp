#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "bico/dataset.hpp"
#include "bico/error.hpp"
#include "bico/hypergrad.hpp"
#include "bico/inner.hpp"
#include "bico/kernels.hpp"
#include "bico/numlin.hpp"

namespace bico {

/// Weighted subset of a dataset; `indices` keeps the selection order.
struct Coreset {
    std::vector<Index> indices;
    std::vector<double> weights;

    [[nodiscard]] size_t size() const { return indices.size(); }
    [[nodiscard]] bool empty() const { return indices.empty(); }
    bool operator==(const Coreset &) const = default;
};

enum class OuterOptimizer { adam, gd };

struct SelectionConfig {
    Index size = 10;
    bool weighted = false;
    Index candidate_pool = 200;
    Index cg_iters = 50;
    double outer_step = 0.05;
    Index outer_iters = 10;
    OuterOptimizer outer_optimizer = OuterOptimizer::adam;
    double lambda = 1e-3;
    KernelSpec kernel = KernelSpec::rbf();
    Loss loss = Loss::squared;
    std::uint64_t seed = 0;
    InnerOptions inner{};

    void validate() const {
        if (size < 0) { throw Error(ErrorCode::ConfigError, "coreset size must be >= 0"); }
        if (candidate_pool < 1) { throw Error(ErrorCode::ConfigError, "candidate pool must be >= 1"); }
        if (cg_iters < 1) { throw Error(ErrorCode::ConfigError, "cg iterations must be >= 1"); }
        if (!(outer_step > 0.0)) { throw Error(ErrorCode::ConfigError, "outer step must be positive"); }
        if (outer_iters < 0) { throw Error(ErrorCode::ConfigError, "outer iterations must be >= 0"); }
        if (!(lambda > 0.0)) { throw Error(ErrorCode::ConfigError, "lambda must be positive"); }
        kernel.validate();
    }
};

namespace detail {

/// Selected basis together with its kernel rows against the whole universe.
class SelectionState {
public:
    SelectionState(const Dataset &data, const SelectionConfig &config) : data_(&data), config_(&config) {}

    void add(Index k, double weight) {
        const Matrix row = cross_gram(config_->kernel, data_->features.row(k), data_->features);
        Matrix grown(cross_.rows() + 1, data_->size());
        if (cross_.rows() > 0) { grown.topRows(cross_.rows()) = cross_; }
        grown.bottomRows(1) = row;
        cross_ = std::move(grown);
        selected_.push_back(k);
        weights_.conservativeResize(weights_.size() + 1);
        weights_[weights_.size() - 1] = weight;
        if (alpha_) {
            Matrix a = Matrix::Zero(alpha_->rows() + 1, alpha_->cols());
            a.topRows(alpha_->rows()) = *alpha_;
            alpha_ = std::move(a);
        }
    }

    [[nodiscard]] InnerProblem problem() const {
        InnerProblem p;
        const Index s = static_cast<Index>(selected_.size());
        p.gram_block.resize(s, s);
        for (Index j = 0; j < s; ++j) { p.gram_block.col(j) = cross_.col(selected_[static_cast<size_t>(j)]); }
        p.gram_block = 0.5 * (p.gram_block + p.gram_block.transpose()).eval();
        p.cross_block = cross_;
        p.labels = data_->targets;
        p.support = selected_;
        p.weights = weights_;
        p.lambda = config_->lambda;
        p.loss = config_->loss;
        return p;
    }

    InnerSolution solve(const InnerProblem &p) {
        InnerSolution sol = solve_inner(p, alpha_, config_->inner);
        alpha_ = sol.alpha;
        return sol;
    }

    [[nodiscard]] const std::vector<Index> &selected() const { return selected_; }
    Vector &weights() { return weights_; }
    [[nodiscard]] const Vector &weights() const { return weights_; }

private:
    const Dataset *data_;
    const SelectionConfig *config_;
    std::vector<Index> selected_;
    Vector weights_;
    Matrix cross_;
    std::optional<Matrix> alpha_;
};

/// Fully-corrective step: fixed-step projected descent of G over the weights
/// of the current support using implicit gradients. Keeps the best iterate.
inline void reoptimize(SelectionState &state, const SelectionConfig &config, const OuterObjective &outer) {
    if (state.selected().empty() || config.outer_iters == 0) { return; }
    const HypergradOptions hopts{config.cg_iters, 1e-10, 1e-4};
    auto evaluate = [&](double &value) {
        const InnerProblem p = state.problem();
        const InnerSolution sol = state.solve(p);
        value = outer_value(p, sol.alpha, outer);
        return implicit_grad(p, sol, outer, state.selected(), hopts).values;
    };

    Vector w = state.weights();
    double value = 0.0;
    Vector grad = evaluate(value);
    Vector best_w = w;
    double best_value = value;
    Vector m1 = Vector::Zero(w.size()), m2 = Vector::Zero(w.size());
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (Index t = 1; t <= config.outer_iters; ++t) {
        if (config.outer_optimizer == OuterOptimizer::adam) {
            m1 = b1 * m1 + (1.0 - b1) * grad;
            m2 = b2 * m2 + (1.0 - b2) * grad.cwiseAbs2();
            const Vector mhat = m1 / (1.0 - std::pow(b1, static_cast<double>(t)));
            const Vector vhat = m2 / (1.0 - std::pow(b2, static_cast<double>(t)));
            w = clamp_nonnegative(w - config.outer_step * (mhat.array() / (vhat.array().sqrt() + eps)).matrix());
        } else {
            w = clamp_nonnegative(w - config.outer_step * grad);
        }
        state.weights() = w;
        grad = evaluate(value);
        if (!std::isfinite(value)) { break; }
        if (value < best_value) {
            best_value = value;
            best_w = w;
        }
    }
    state.weights() = best_w;
}

}  // namespace detail

/// Greedy forward selection by matching pursuit on the bilevel objective.
///
/// The first point is drawn uniformly with `config.seed`. Each further point is
/// the candidate with the most negative implicit gradient among a fresh uniform
/// pool of min(candidate_pool, n - |S|) unselected points. In weighted mode the
/// weights are reoptimized before every scoring pass and once at the end; in
/// binary mode all weights stay 1. Requesting all n points returns them in
/// dataset order with unit weights.
inline Coreset build_coreset(const Dataset &data, const SelectionConfig &config,
                             const OuterObjective &outer = OuterObjective::total()) {
    config.validate();
    const Index n = data.size();
    if (config.size > n) {
        throw Error(ErrorCode::InsufficientData, "requested coreset of " + std::to_string(config.size) +
                                                     " points from " + std::to_string(n));
    }
    Coreset out;
    if (config.size == 0) { return out; }
    if (config.size == n) {
        out.indices = iota_indices(n);
        out.weights.assign(static_cast<size_t>(n), 1.0);
        return out;
    }

    Rng rng(config.seed);
    detail::SelectionState state(data, config);
    std::uniform_int_distribution<Index> first(0, n - 1);
    state.add(first(rng), 1.0);

    std::vector<char> taken(static_cast<size_t>(n), 0);
    taken[static_cast<size_t>(state.selected().front())] = 1;
    const HypergradOptions hopts{config.cg_iters, 1e-10, 1e-4};
    while (static_cast<Index>(state.selected().size()) < config.size) {
        if (config.weighted) { detail::reoptimize(state, config, outer); }
        const InnerProblem p = state.problem();
        const InnerSolution sol = state.solve(p);

        std::vector<Index> free;
        free.reserve(static_cast<size_t>(n) - state.selected().size());
        for (Index i = 0; i < n; ++i) {
            if (!taken[static_cast<size_t>(i)]) { free.push_back(i); }
        }
        std::vector<Index> pool = sample_without_replacement(std::move(free), static_cast<size_t>(config.candidate_pool), rng);
        std::sort(pool.begin(), pool.end());

        const Index k = select_candidate(implicit_grad(p, sol, outer, pool, hopts));
        taken[static_cast<size_t>(k)] = 1;
        state.add(k, 1.0);
    }
    if (config.weighted) { detail::reoptimize(state, config, outer); }

    out.indices = state.selected();
    out.weights.assign(state.weights().data(), state.weights().data() + state.weights().size());
    return out;
}

/// Value of the outer objective for a given coreset (inner problem solved on
/// the coreset with its weights).
inline double coreset_outer_value(const Dataset &data, const Coreset &coreset, const SelectionConfig &config,
                                  const OuterObjective &outer = OuterObjective::total()) {
    detail::SelectionState state(data, config);
    for (size_t j = 0; j < coreset.size(); ++j) { state.add(coreset.indices[j], coreset.weights[j]); }
    const InnerProblem p = state.problem();
    const InnerSolution sol = state.solve(p);
    return outer_value(p, sol.alpha, outer);
}

inline Coreset reoptimize_weights(const Dataset &data, const Coreset &coreset, const SelectionConfig &config,
                                  const OuterObjective &outer = OuterObjective::total()) {
    config.validate();
    if (coreset.empty()) { throw Error(ErrorCode::InsufficientData, "reoptimize_weights: empty coreset"); }
    detail::SelectionState state(data, config);
    for (size_t j = 0; j < coreset.size(); ++j) { state.add(coreset.indices[j], coreset.weights[j]); }
    detail::reoptimize(state, config, outer);
    Coreset out;
    out.indices = coreset.indices;
    out.weights.assign(state.weights().data(), state.weights().data() + state.weights().size());
    return out;
}

/// Keeps the first `new_size` points in selection order.
inline Coreset shrink_prefix(const Coreset &coreset, size_t new_size, bool binary = true) {
    if (new_size > coreset.size()) {
        throw Error(ErrorCode::SizeExceeded, "shrink_prefix: " + std::to_string(new_size) + " > " +
                                                 std::to_string(coreset.size()));
    }
    Coreset out;
    out.indices.assign(coreset.indices.begin(), coreset.indices.begin() + static_cast<std::ptrdiff_t>(new_size));
    if (binary) {
        out.weights.assign(new_size, 1.0);
    } else {
        out.weights.assign(coreset.weights.begin(), coreset.weights.begin() + static_cast<std::ptrdiff_t>(new_size));
    }
    return out;
}

/// Summarizes the union of two coresets of `data` into `target_size` points,
/// with the outer objective defined on the union. Duplicate indices collapse.
inline Coreset merge_coresets(const Dataset &data, const Coreset &a, const Coreset &b, size_t target_size,
                              const SelectionConfig &config) {
    if (target_size > a.size() + b.size()) {
        throw Error(ErrorCode::SizeExceeded, "merge_coresets: target exceeds the combined size");
    }
    std::vector<Index> uni;
    std::unordered_set<Index> seen;
    for (const Coreset *c : {&a, &b}) {
        for (Index i : c->indices) {
            if (seen.insert(i).second) { uni.push_back(i); }
        }
    }
    target_size = std::min(target_size, uni.size());
    if (target_size == uni.size()) {
        Coreset out;
        out.indices = uni;
        out.weights.assign(uni.size(), 1.0);
        return out;
    }
    const Dataset sub = data.subset(uni);
    SelectionConfig cfg = config;
    cfg.size = static_cast<Index>(target_size);
    const Coreset local = build_coreset(sub, cfg);
    Coreset out;
    out.weights = local.weights;
    for (Index i : local.indices) { out.indices.push_back(uni[static_cast<size_t>(i)]); }
    return out;
}

}  // namespace bico
